"""Seed handling.

Every stochastic entry point takes either an integer seed or an
already-constructed generator. Streams are built on the counter-based Philox
bit generator, so a given seed yields the same draws on any platform and any
thread count.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Return a Philox-backed generator for an integer seed; pass through
    generators unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
