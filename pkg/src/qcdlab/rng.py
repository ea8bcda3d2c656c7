"""Per-trial random streams.

Every Monte Carlo trial owns its own counter-based (Philox) generator whose
seed is ``base_seed XOR trial_index``. Observation noise, fractional-sampling
coins and random change points come from separate sub-streams of that seed so
they are statistically independent of each other.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

#: sub-stream tags
OBS = 0
COIN = 1
CHANGE = 2
CYCLE = 3

#: draws are always taken in blocks of this size so that the scalar reference
#: path and the vectorised engine consume identical sequences
BLOCK = 256


def trial_seed(base_seed: int, index: int) -> int:
    return (int(base_seed) ^ int(index)) & MASK64


def make_rng(seed: int, purpose: int = OBS) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & MASK64, int(purpose)])
    return np.random.Generator(np.random.Philox(ss))


def trial_seeds(base_seed: int, n: int, offset: int = 0) -> np.ndarray:
    idx = np.arange(offset, offset + n, dtype=np.uint64)
    return np.bitwise_xor(np.uint64(int(base_seed) & MASK64), idx)


def derive_seed(base_seed: int, *tags: int) -> int:
    """A new base seed for an independent experiment component (e.g. one CADD change time)."""
    ss = np.random.SeedSequence([int(base_seed) & MASK64, 0xC0FFEE, *[int(t) for t in tags]])
    return int(ss.generate_state(1, np.uint64)[0])
