"""Named, splittable random substreams.

Every stochastic stage of a run draws from its own substream, derived from
a base seed plus a tuple of tags (ints or short names). Substreams are
independent and reproducible regardless of execution order, so replications
can run in parallel without sharing generator state.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "stream_seed"]


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        if tag < 0:
            raise ValueError("substream tags must be nonnegative")
        return int(tag)
    return zlib.crc32(str(tag).encode("utf8"))


def substream(seed: int, *tags) -> np.random.Generator:
    """Return a Generator for the substream identified by ``tags``."""
    key = tuple(_tag_to_int(t) for t in tags)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def stream_seed(seed: int, *tags) -> int:
    """Collapse a named substream to a single integer seed."""
    key = tuple(_tag_to_int(t) for t in tags)
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])
