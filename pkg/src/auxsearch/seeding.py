"""Counter-based seed derivation.

Every random stream is ``SeedSequence(global_seed, spawn_key=(purpose, *counters))``,
so a stream depends only on its coordinates, never on execution order. The
purpose codes below are part of the on-disk contract: do not renumber them.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "bootstrap": 0,
    "mutate": 1,
    "train": 2,
    "prune": 3,
    "cross_validate": 4,
    "surrogate": 5,
}


def seed_sequence(global_seed: int, purpose: str, *counters: int) -> np.random.SeedSequence:
    if global_seed < 0 or any(c < 0 for c in counters):
        raise ValueError("seeds and counters must be non-negative")
    return np.random.SeedSequence(global_seed, spawn_key=(PURPOSES[purpose], *counters))


def derive_seed(global_seed: int, purpose: str, *counters: int) -> int:
    """A 32-bit run seed for the given coordinates."""
    return int(seed_sequence(global_seed, purpose, *counters).generate_state(1)[0])


def derive_rng(global_seed: int, purpose: str, *counters: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(global_seed, purpose, *counters))
