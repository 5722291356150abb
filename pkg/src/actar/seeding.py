"""Stable per-item seed derivation (independent of processing order)."""

import zlib

import numpy as np


def derive_seed(seed: int, *keys) -> int:
    """Mix ``seed`` with ``keys`` (ints or strings) into a new 32-bit seed."""
    words = [int(k) if isinstance(k, (int, np.integer)) else zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words]).generate_state(1)[0])
