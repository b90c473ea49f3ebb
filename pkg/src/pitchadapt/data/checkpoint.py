"""Binary checkpoint container.

Layout (little endian)::

    b"ADPT"  u32 version  u32 blob_count
    blob*:   u32 name_len  name(utf-8)  u64 payload_len  payload
    u64 checksum   (blake2b-64 of every preceding byte)

The ``__meta__`` blob holds the JSON config snapshot, step and seed.  Every
other blob is one parameter: u8 frozen, u8 dtype code, u32 ndim, u32 dims,
raw values.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff.params import ParameterSet
from ..autodiff.tensor import Parameter
from ..errors import CheckpointError

MAGIC = b"ADPT"
VERSION = 1
META = "__meta__"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    params: ParameterSet
    config: dict = field(default_factory=dict)
    step: int = 0
    seed: int = 0
    version: int = VERSION

    def components(self) -> list[str]:
        return self.params.components()

    def without(self, *components: str) -> "Checkpoint":
        keep = ParameterSet({k: p for k, p in self.params.items() if k.split(".", 1)[0] not in components})
        return Checkpoint(keep, dict(self.config), self.step, self.seed, self.version)


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def _blob(name: str, payload: bytes) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw + struct.pack("<Q", len(payload)) + payload


def serialize(ckpt: Checkpoint) -> bytes:
    meta = json.dumps({"config": ckpt.config, "step": ckpt.step, "seed": ckpt.seed},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")
    blobs = [_blob(META, meta)]
    for name, p in ckpt.params.items():
        arr = np.ascontiguousarray(p.data)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        header = struct.pack("<BBI", int(p.frozen), _CODES[dt], arr.ndim)
        header += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blobs.append(_blob(name, header + arr.astype(dt, copy=False).tobytes()))
    body = MAGIC + struct.pack("<II", ckpt.version, len(blobs)) + b"".join(blobs)
    return body + _checksum(body)


def deserialize(data: bytes) -> Checkpoint:
    if len(data) < 20 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, tail = data[:-8], data[-8:]
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} != supported {VERSION}")
    if _checksum(body) != tail:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt")
    off = 12
    params = ParameterSet()
    meta = None
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off:off + n].decode("utf-8")
            off += n
            (size,) = struct.unpack_from("<Q", body, off)
            off += 8
            payload = body[off:off + size]
            off += size
            if name == META:
                meta = json.loads(payload.decode("utf-8"))
                continue
            frozen, code, ndim = struct.unpack_from("<BBI", payload, 0)
            shape = struct.unpack_from(f"<{ndim}I", payload, 6)
            arr = np.frombuffer(payload, dtype=_DTYPES[code], offset=6 + 4 * ndim).reshape(shape)
            params[name] = Parameter(arr.astype(arr.dtype.newbyteorder("="), copy=True), frozen=bool(frozen))
    except (struct.error, KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if meta is None:
        raise CheckpointError("checkpoint has no metadata blob")
    return Checkpoint(params, meta["config"], meta["step"], meta["seed"], version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(serialize(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return deserialize(Path(path).read_bytes())
