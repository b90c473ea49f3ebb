"""Named parameter collections and seeded initializers."""
from __future__ import annotations

import hashlib
from collections.abc import Iterator, Mapping, MutableMapping

import numpy as np

from .tensor import DEFAULT_DTYPE, Parameter


class ParameterSet(MutableMapping):
    """Ordered map ``path -> Parameter``.

    Paths are dotted (``"mel_decoder.block0.ffn.w1"``); :meth:`scope` gives a
    view with a prefix stripped so sub-network code can use short names.
    """

    def __init__(self, items: Mapping[str, Parameter] | None = None):
        self._items: dict[str, Parameter] = {}
        if items:
            for k, v in items.items():
                self[k] = v

    def __getitem__(self, key: str) -> Parameter:
        return self._items[key]

    def __setitem__(self, key: str, value) -> None:
        if not isinstance(value, Parameter):
            value = Parameter(value, name=key)
        value.name = key
        self._items[key] = value

    def __delitem__(self, key: str) -> None:
        del self._items[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __repr__(self) -> str:
        n = sum(p.size for p in self._items.values())
        return f"ParameterSet({len(self)} tensors, {n} values)"

    def scope(self, prefix: str) -> "ParameterSet":
        """Sub-collection under ``prefix.``; shares the Parameter objects."""
        pre = prefix + "."
        out = ParameterSet()
        for k, v in self._items.items():
            if k.startswith(pre):
                out._items[k[len(pre):]] = v
        return out

    def add_scope(self, prefix: str, other: Mapping[str, Parameter]) -> None:
        for k, v in other.items():
            self[f"{prefix}.{k}"] = v

    def components(self) -> list[str]:
        seen: dict[str, None] = {}
        for k in self._items:
            seen.setdefault(k.split(".", 1)[0], None)
        return list(seen)

    def freeze(self, prefix: str | None = None, frozen: bool = True) -> None:
        for k, p in self._items.items():
            if prefix is None or k == prefix or k.startswith(prefix + "."):
                p.frozen = frozen

    def trainable(self) -> dict[str, Parameter]:
        return {k: p for k, p in self._items.items() if not p.frozen}

    def zero_grad(self) -> None:
        for p in self._items.values():
            p.grad = None

    def digest(self, prefix: str | None = None) -> str:
        """SHA-256 over names, shapes and raw bytes (byte-exact identity)."""
        h = hashlib.sha256()
        for k in sorted(self._items):
            if prefix is not None and not (k == prefix or k.startswith(prefix + ".")):
                continue
            p = self._items[k]
            h.update(k.encode())
            h.update(str(p.shape).encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: Parameter(p.data.copy(), frozen=p.frozen) for k, p in self._items.items()})


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE)


def dense_init(rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True) -> dict[str, np.ndarray]:
    out = {"weight": uniform_fan_in(rng, (d_in, d_out), d_in)}
    if bias:
        out["bias"] = np.zeros(d_out, dtype=DEFAULT_DTYPE)
    return out


def prefixed(prefix: str, arrays: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in arrays.items()}
