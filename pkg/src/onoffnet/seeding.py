"""Counter-based seed splitting.

A root seed and a tuple of non-negative integers (replication index, stream
id, ...) identify one random stream: ``SeedSequence(root, spawn_key=key)``.
Streams never depend on how many siblings exist, so adding replications
leaves the existing ones untouched, and running replications in a different
order or in parallel changes nothing.
"""
from __future__ import annotations

import numpy as np

# Stream ids inside one replication.
ARRIVALS = 0
ENVIRONMENT = 1
SERVICE = 2
ROUTING = 3
RBM = 4
COUPLING = 5


def seed_sequence(seed, *key: int) -> np.random.SeedSequence:
    """Return the seed sequence for ``key`` below ``seed``.

    ``seed`` may be an int (a root seed) or a ``SeedSequence``; in the latter
    case ``key`` is appended to its spawn key.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def rng(seed, *key: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *key))
