"""Seeded randomness with deterministic per-purpose child streams."""
from __future__ import annotations

import numpy as np


def resolve_seed(seed: int | None) -> int:
    """Return the seed itself, or fresh entropy when none was configured."""
    if seed is not None:
        return int(seed)
    return int(np.random.SeedSequence().entropy % (2**63))


def seeded_rng(seed: int | None = None) -> np.random.Generator:
    """Root generator for a run; identical seeds give identical streams."""
    return np.random.default_rng(np.random.SeedSequence(resolve_seed(seed)))


def child_rng(seed: int | None, *key: int) -> np.random.Generator:
    """Independent generator derived from (seed, key).

    Keys isolate consumers: the stream for (super-iteration 2, pulse 0) does
    not change when another pulse is added to the configuration.
    """
    if seed is None:
        raise ValueError("child streams need a resolved integer seed")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)
