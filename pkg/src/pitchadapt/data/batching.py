"""Feature containers and deterministic padded batching."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


@dataclass
class Utterance:
    """Per-utterance training features; any field may be absent for a given stage."""

    id: str
    tokens: np.ndarray | None = None  # (L,) int
    mel: np.ndarray | None = None  # (F, M)
    f0: np.ndarray | None = None  # (F,) Hz
    voiced: np.ndarray | None = None  # (F,) bool
    durations: np.ndarray | None = None  # (L,) int
    speaker: int | None = None
    text_latent: np.ndarray | None = None  # (L, D) cached frozen encoder output
    teacher_latent: np.ndarray | None = None  # (F, d_lat) cached mel-encoder output


TOKEN_FIELDS = ("tokens", "durations", "text_latent")
FRAME_FIELDS = ("mel", "f0", "voiced", "teacher_latent")


@dataclass
class Batch:
    ids: list[str]
    tokens: np.ndarray | None = None
    token_mask: np.ndarray | None = None
    durations: np.ndarray | None = None
    text_latent: np.ndarray | None = None
    mel: np.ndarray | None = None
    frame_mask: np.ndarray | None = None
    f0: np.ndarray | None = None
    voiced: np.ndarray | None = None
    teacher_latent: np.ndarray | None = None
    speakers: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)


def pad_stack(arrays: Sequence[np.ndarray], pad_value=0) -> tuple[np.ndarray, np.ndarray]:
    """Stack along a new batch axis, padding axis 0; returns (padded, mask)."""
    longest = max(a.shape[0] for a in arrays)
    first = arrays[0]
    out = np.full((len(arrays), longest) + first.shape[1:], pad_value, dtype=first.dtype)
    mask = np.zeros((len(arrays), longest), dtype=np.float32)
    for i, a in enumerate(arrays):
        out[i, :a.shape[0]] = a
        mask[i, :a.shape[0]] = 1.0
    return out, mask


def collate(items: Sequence[Utterance], pad_value: float = 0.0) -> Batch:
    batch = Batch(ids=[u.id for u in items])
    for f in TOKEN_FIELDS + FRAME_FIELDS:
        values = [getattr(u, f) for u in items]
        if any(v is None for v in values):
            continue
        pv = pad_value if np.issubdtype(values[0].dtype, np.floating) else 0
        padded, mask = pad_stack(values, pv)
        setattr(batch, f, padded)
        if f in TOKEN_FIELDS and batch.token_mask is None:
            batch.token_mask = mask
        if f in FRAME_FIELDS and batch.frame_mask is None:
            batch.frame_mask = mask
    if all(u.speaker is not None for u in items):
        batch.speakers = np.array([u.speaker for u in items], dtype=np.int64)
    return batch


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_iterate(items: Sequence[Utterance], batch_size: int, seed: int, epoch: int = 0,
                  pad_value: float = 0.0) -> Iterator[Batch]:
    """Batches of one epoch in a seeded order; the order depends only on (items, seed, epoch)."""
    if not items:
        raise ValueError("cannot batch an empty corpus")
    order = epoch_order(len(items), seed, epoch)
    for start in range(0, len(items), batch_size):
        yield collate([items[i] for i in order[start:start + batch_size]], pad_value)


def endless_batches(items: Sequence[Utterance], batch_size: int, seed: int) -> Iterator[Batch]:
    epoch = 0
    while True:
        yield from batch_iterate(items, batch_size, seed, epoch)
        epoch += 1


