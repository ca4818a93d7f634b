"""Deterministic random streams.

Every random quantity is drawn from a generator keyed by
``(master seed, purpose, *keys)``, so results for one area or replicate do
not depend on the order in which the others are evaluated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PURPOSES = {
    "covariates": 1,
    "population": 2,
    "predict": 3,
    "posterior": 4,
    "bootstrap": 5,
    "world-posterior": 6,
    "replicate": 7,
}


@dataclass(frozen=True)
class Streams:
    """A node in a tree of independent random streams."""

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def child(self, purpose: str, *keys: int) -> "Streams":
        return Streams(self.seed, self.path + (PURPOSES[purpose], *map(int, keys)))

    def rng(self, purpose: str, *keys: int) -> np.random.Generator:
        spawn_key = self.path + (PURPOSES[purpose], *map(int, keys))
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(self.seed), spawn_key=spawn_key)))


def as_streams(seed) -> Streams:
    if isinstance(seed, Streams):
        return seed
    return Streams(int(seed))
