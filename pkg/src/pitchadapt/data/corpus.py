"""Synthetic multi-speaker corpus with exact ground truth.

Each utterance is a harmonic tone.  The phoneme sets the relative harmonic
amplitudes, the speaker sets an f0 range and a spectral tilt, and the
per-phoneme durations and f0 anchors are written to the manifest / ``.f0``
files so every later stage can be checked against known values.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..dsp.audio import Waveform, save_wav
from ..dsp.text import format_lexicon
from ..errors import ContractError
from ..variance_adaptor import interpolate_values
from .manifest import ManifestEntry, write_manifest

SYLLABLES = ("ba", "de", "gi", "ko", "mu", "na", "pe", "ri", "so", "tu", "va", "ze", "lo", "hu", "fa", "ji",
             "ka", "me", "ni", "po", "ru", "sa", "te", "wo")
N_HARMONICS = 24


@dataclass(frozen=True)
class CorpusSpec:
    num_utterances: int = 32
    num_speakers: int = 2
    seed: int = 0
    phoneme_vocab_size: int = 16
    sample_rate: int = 22050
    hop: int = 256
    min_phonemes: int = 5
    max_phonemes: int = 12
    min_duration: int = 5
    max_duration: int = 20

    def __post_init__(self):
        for name in ("num_utterances", "num_speakers", "phoneme_vocab_size", "sample_rate", "hop"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.phoneme_vocab_size > len(SYLLABLES):
            raise ContractError(f"at most {len(SYLLABLES)} toy phonemes are available")

    def to_dict(self) -> dict:
        return asdict(self)


def phoneme_symbols(n: int) -> list[str]:
    return [f"P{i:02d}" for i in range(n)]


def speaker_f0_range(speaker: int, num_speakers: int) -> tuple[float, float]:
    """Speaker ranges step upward from 90-160 Hz to 150-260 Hz."""
    frac = 0.0 if num_speakers == 1 else speaker / (num_speakers - 1)
    return 90.0 + 60.0 * frac, 160.0 + 100.0 * frac


def speaker_tilt(speaker: int, num_speakers: int) -> float:
    frac = 0.0 if num_speakers == 1 else speaker / (num_speakers - 1)
    return 0.92 - 0.27 * frac


@dataclass
class ToyInventory:
    symbols: list[str]
    profiles: np.ndarray  # (V, N_HARMONICS) relative harmonic amplitudes
    base_durations: np.ndarray  # (V,) frames
    lexicon: dict[str, list[str]]


def build_inventory(spec: CorpusSpec, rng: np.random.Generator) -> ToyInventory:
    v = spec.phoneme_vocab_size
    symbols = phoneme_symbols(v)
    profiles = rng.uniform(0.05, 1.0, (v, N_HARMONICS))
    profiles[:, 0] = 1.0
    profiles *= 1.0 / np.arange(1, N_HARMONICS + 1) ** 0.5
    base = rng.integers(spec.min_duration, spec.max_duration + 1, v)
    lexicon: dict[str, list[str]] = {}
    for i in range(v):
        lexicon[SYLLABLES[i]] = [symbols[i]]
    while len(lexicon) < 3 * v:
        k = int(rng.integers(2, 4))
        parts = rng.integers(0, v, k)
        word = "".join(SYLLABLES[p] for p in parts)
        lexicon.setdefault(word, [symbols[p] for p in parts])
    return ToyInventory(symbols, profiles, base, lexicon)


def _sample_words(lexicon: dict[str, list[str]], length: int, rng: np.random.Generator) -> list[str]:
    words = list(lexicon)
    out: list[str] = []
    remaining = length
    while remaining > 0:
        fits = [w for w in words if len(lexicon[w]) <= remaining]
        w = fits[int(rng.integers(len(fits)))]
        out.append(w)
        remaining -= len(lexicon[w])
    return out


def render_utterance(phoneme_ids: np.ndarray, durations: np.ndarray, f0_anchors: np.ndarray, speaker: int,
                     inventory: ToyInventory, spec: CorpusSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return (samples, per-frame f0).  Sample count is ``sum(durations) * hop``."""
    hop, sr = spec.hop, spec.sample_rate
    n_frames = int(durations.sum())
    frame_f0 = interpolate_values(f0_anchors, durations)
    n = n_frames * hop
    t_frames = np.arange(n_frames) * hop
    t = np.arange(n)
    f0 = np.interp(t, t_frames, frame_f0)
    phase = 2.0 * np.pi * np.cumsum(f0) / sr
    frame_profiles = inventory.profiles[np.repeat(phoneme_ids, durations)]
    tilt = speaker_tilt(speaker, spec.num_speakers) ** np.arange(N_HARMONICS)
    out = np.zeros(n)
    for k in range(N_HARMONICS):
        amp = np.interp(t, t_frames, frame_profiles[:, k]) * tilt[k]
        amp = np.where(f0 * (k + 1) < 0.45 * sr, amp, 0.0)
        out += amp * np.sin((k + 1) * phase)
    peak = float((inventory.profiles.sum(axis=1)).max())
    return 0.9 * out / peak, frame_f0


def format_f0(f0: np.ndarray, hop: int, sample_rate: int) -> str:
    lines = [f"# hop={hop} sample_rate={sample_rate}"]
    lines += [f"{v:.4f}" for v in f0]
    return "\n".join(lines) + "\n"


def parse_f0(text: str) -> np.ndarray:
    vals = [float(line) for line in (raw.split("#", 1)[0].strip() for raw in text.splitlines()) if line]
    return np.asarray(vals, dtype=np.float64)


def generate_toy_corpus(spec: CorpusSpec, out_dir) -> list[ManifestEntry]:
    """Write ``manifest.jsonl``, ``lexicon.txt``, ``wavs/`` and ``f0/`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "wavs").mkdir(parents=True, exist_ok=True)
    (out / "f0").mkdir(exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    inv = build_inventory(spec, rng)
    sym_index = {s: i for i, s in enumerate(inv.symbols)}
    entries: list[ManifestEntry] = []
    for u in range(spec.num_utterances):
        speaker = u % spec.num_speakers
        length = int(rng.integers(spec.min_phonemes, spec.max_phonemes + 1))
        words = _sample_words(inv.lexicon, length, rng)
        ids = np.array([sym_index[p] for w in words for p in inv.lexicon[w]])
        jitter = rng.integers(-1, 2, ids.size)
        durations = np.clip(inv.base_durations[ids] + jitter, spec.min_duration, spec.max_duration)
        lo, hi = speaker_f0_range(speaker, spec.num_speakers)
        anchors = rng.uniform(lo, hi, ids.size)
        samples, frame_f0 = render_utterance(ids, durations, anchors, speaker, inv, spec)
        uid = f"utt{u:04d}"
        save_wav(out / "wavs" / f"{uid}.wav", Waveform(samples, spec.sample_rate))
        (out / "f0" / f"{uid}.f0").write_text(format_f0(frame_f0, spec.hop, spec.sample_rate))
        entries.append(ManifestEntry(id=uid, audio=f"wavs/{uid}.wav", text=" ".join(words), speaker=speaker,
                                     durations=[int(d) for d in durations], split="train", f0=f"f0/{uid}.f0",
                                     root=out.resolve()))
    write_manifest(entries, out / "manifest.jsonl")
    (out / "lexicon.txt").write_text(format_lexicon(inv.lexicon))
    (out / "corpus.json").write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=2) + "\n")
    return entries
