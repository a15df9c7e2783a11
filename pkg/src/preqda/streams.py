"""Keyed, reproducible random streams.

Every random draw in the package comes from a generator derived from an
integer key tuple (seed, episode, tempering step, chain index, ...), so
results are bit-identical regardless of evaluation order or parallel
schedule, and runs can be resumed without replaying earlier draws.
"""

from __future__ import annotations

import numpy as np


def stream(*key: int) -> np.random.Generator:
    entropy = [int(k) & 0xFFFFFFFF for k in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))
