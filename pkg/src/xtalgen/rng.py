"""Seedable randomness.

All stochastic operations in this package draw from numpy Generators
backed by the counter-based Philox bit generator, so streams are
reproducible bit-for-bit across platforms. Independent substreams
(e.g. per noise level in a Monte-Carlo loop) come from the same seed
with a distinct stream index in the Philox key.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng"]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for (seed, stream); equal arguments give equal streams."""
    seed = int(seed)
    stream = int(stream)
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
