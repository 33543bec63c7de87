"""Seed derivation: every random stream is a pure function of the run seed plus a key path."""
from __future__ import annotations

import hashlib

import numpy as np


def _key_int(k) -> int:
    if isinstance(k, (int, np.integer)) and k >= 0:
        return int(k)
    digest = hashlib.sha256(str(k).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def derive_seed(root: int, *keys) -> int:
    """Derive a 63-bit child seed from ``root`` and a path of ints/strings."""
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(_key_int(k) for k in keys))
    a, b = ss.generate_state(2, dtype=np.uint32)
    return ((int(a) << 32) | int(b)) & ((1 << 63) - 1)


def derive_rng(root: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *keys))
