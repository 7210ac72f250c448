"""Seed handling and the provenance clock."""
from __future__ import annotations

import itertools
import os
import time

import numpy as np

_FROZEN_ENV = "DPMIX_FROZEN_CLOCK"
_ticks = itertools.count(1)


def make_rng(seed=None) -> np.random.Generator:
    """Accept an int seed, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn(seed, n: int) -> list[np.random.Generator]:
    """Split ``n`` independent streams from a root seed, in a fixed order.

    The root is never advanced, so repeated calls return the same streams.
    """
    if isinstance(seed, np.random.Generator):
        seed = seed.bit_generator.seed_seq
    if isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    else:
        seed = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in seed.spawn(n)]


def clock_frozen() -> bool:
    return os.environ.get(_FROZEN_ENV, "") not in ("", "0")


def now_ns() -> int:
    """Wall clock in ns, or a process-local counter when the clock is frozen.

    Both are monotone within a process, which is all the provenance check needs.
    """
    if clock_frozen():
        return next(_ticks)
    return max(time.time_ns(), next(_ticks))


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get("DPMIX_THREADS", "1")))
    except ValueError:
        return 1
