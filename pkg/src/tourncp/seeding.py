"""Deterministic seed derivation.

Every random stream is addressed by ``(master_seed, trial, purpose, *extra)``
so that results never depend on evaluation order or worker count.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def seed_sequence(master_seed: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1),
                                  spawn_key=tuple(_key(p) for p in path))


def rng_for(master_seed: int, *path) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *path)))


def int_seed(master_seed: int, *path) -> int:
    """A 63-bit integer seed derived from the path."""
    return int(seed_sequence(master_seed, *path).generate_state(1, np.uint64)[0] >> 1)
