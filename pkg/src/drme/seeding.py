"""Deterministic seed derivation from (base seed, key, key, ...) tuples."""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("integer seed keys must be nonnegative")
        return int(k)
    if isinstance(k, float):
        return zlib.crc32(repr(k).encode())
    return zlib.crc32(str(k).encode())


def derive_seed(base: int, *keys) -> int:
    """A 63-bit seed that depends only on ``base`` and the keys."""
    ss = np.random.SeedSequence([_key(base)] + [_key(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0]) & (2**63 - 1)


def derive_rng(base: int, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([_key(base)] + [_key(k) for k in keys]))
