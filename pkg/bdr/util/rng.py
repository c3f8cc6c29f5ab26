"""
Seed tree for reproducible, order-independent random streams.

Every generator handed out by a ``RandomStreams`` is addressed by a path of
integers appended to the root ``spawn_key`` of a ``numpy.random.SeedSequence``.
Replicate ``l`` of the Dirichlet weight loop always draws from
``streams.generator(Stage.WEIGHTS, l)``, whatever thread runs it.
"""
from enum import IntEnum
from typing import Optional

import numpy as np

# keep seeds in the positive int64 range so they survive json and argparse
_SEED_BITS = 63


class Stage(IntEnum):
    WEIGHTS = 1
    PRIOR = 2
    PREDICTIVE = 3
    FREQUENTIST = 4
    DGP = 5
    RUN = 6
    PROPENSITY = 7
    SEED = 8


def fresh_seed() -> int:
    entropy = np.random.SeedSequence().entropy
    return int(entropy) & ((1 << _SEED_BITS) - 1)


class RandomStreams:
    def __init__(self, seed: Optional[int] = None, _path: tuple[int, ...] = ()):
        if seed is None:
            seed = fresh_seed()
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.path = tuple(int(k) for k in _path)

    def __repr__(self):
        return f"RandomStreams(seed={self.seed}, path={self.path})"

    def spawn(self, *key: int) -> "RandomStreams":
        return RandomStreams(self.seed, self.path + key)

    def seed_sequence(self, *key: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.seed, spawn_key=self.path + key)

    def generator(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence(*key))
