"""Stable 64-bit seed derivation.

Every per-location and per-member random stream is seeded from a base seed
and integer keys through :func:`mix_seed`, so results never depend on which
worker ran which task or in what order. The mixing function is splitmix64
(Steele, Lea & Flood finaliser) and must not change between releases.
"""

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seed(base: int, *keys: int) -> int:
    """Fold integer ``keys`` into ``base``; e.g. ``mix_seed(seed, row, col)``."""
    h = splitmix64(int(base) & MASK64)
    for k in keys:
        h = splitmix64(h ^ (int(k) & MASK64))
    return h


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))
