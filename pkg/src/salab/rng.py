"""Seeded, splittable random streams.

Every Monte Carlo run owns a Philox (counter-based) generator keyed by
``(master_seed, *key)``, so run ``i`` draws the same numbers regardless of
how runs are batched or distributed across threads.
"""
import numpy as np


def derive_seed(master_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))


def make_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Return the generator for the stream identified by ``(master_seed, *key)``."""
    return np.random.Generator(np.random.Philox(derive_seed(master_seed, *key)))
