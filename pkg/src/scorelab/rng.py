"""Deterministic RNG plumbing: master seeds split into independent substreams."""

from __future__ import annotations

import numpy as np


def generator(seed: int | np.random.Generator) -> np.random.Generator:
    """Coerce a seed (or pass through an existing Generator)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def substreams(seed: int, n: int) -> list[np.random.Generator]:
    """n independent generators derived from one master seed by counter splitting.

    Streams are reproducible and mutually independent, so per-trial /
    per-path work can be parallelized or reordered without changing results.
    """
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
