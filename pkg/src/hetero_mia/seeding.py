"""Seed derivation.

Every stochastic step draws from a ``numpy.random.Generator`` backed by PCG64.
Child seeds are produced by hashing the parent seed together with integer
coordinates (repeat index, round, client, ...) through ``numpy.random.SeedSequence``,
so a child stream depends only on its coordinates and never on how many
siblings were drawn before it.
"""

import numpy as np

__all__ = ["derive_seed", "make_rng"]

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *coords: int) -> int:
    """Return a 64-bit child seed for ``(seed, *coords)``."""
    entropy = [int(seed) & _MASK64, *(int(c) & _MASK64 for c in coords)]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def make_rng(seed: int, *coords: int) -> np.random.Generator:
    if coords:
        seed = derive_seed(seed, *coords)
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
