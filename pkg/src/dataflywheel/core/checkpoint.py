"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    magic   b"DFWCKPT\\0"
    u32     format version
    u32     metadata length, then UTF-8 JSON metadata
    u32     tensor count
    per tensor: u32 name length, name, u32 ndim, u64 * ndim dims, f64 * n values
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"DFWCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, Tensor | np.ndarray], meta: dict | None = None) -> None:
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", VERSION)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    buf += struct.pack("<I", len(meta_bytes)) + meta_bytes
    buf += struct.pack("<I", len(tensors))
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        nb = name.encode()
        buf += struct.pack("<I", len(nb)) + nb
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path: str | Path) -> tuple[dict[str, Tensor], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise CheckpointError(f"{path}: truncated")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = take("<I")
    meta = json.loads(raw[pos:pos + mlen].decode())
    pos += mlen
    (count,) = take("<I")
    tensors: dict[str, Tensor] = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = raw[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q")
        n = int(np.prod(shape)) if ndim else 1
        if pos + 8 * n > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {name!r}")
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * n
        tensors[name] = Tensor(arr, requires_grad=True, name=name)
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes")
    return tensors, meta
