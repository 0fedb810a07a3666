"""Seed derivation.

Every random stream is addressed by a tuple of non-negative integers
``(master_seed, replication, stream, ...)`` hashed through numpy's
``SeedSequence``. Results therefore depend only on the tuple, never on the
order in which workers run.
"""

from __future__ import annotations

import numpy as np

SEED_MAX = 2**64

# stream identifiers inside one replication
POPULATION = 1
COHORT = 2
SAMPLING = 3
EXECUTION = 4
BOOTSTRAP = 5
CALIBRATION = 6
PRIOR_TRIALS = 7
ADAPTIVE = 8


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def derive_seed(*keys: int) -> int:
    """Mix a tuple of integers into one 64-bit seed."""
    ss = np.random.SeedSequence([check_seed(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([check_seed(k) for k in keys]))
