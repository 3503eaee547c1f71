"""Seeded random streams.

A ``RandomSource`` is a (seed, stream) pair. The two 64-bit words are mixed with
the splitmix64 finalizer into a single 64-bit key that seeds numpy's PCG64, so the
same pair always yields the same sequence and distinct streams are decorrelated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> int:
    """One splitmix64 step: advance ``state`` and return the mixed output."""
    z = (state + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RandomSource:
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= MASK64 and 0 <= self.stream <= MASK64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")

    @property
    def key(self) -> int:
        return splitmix64(splitmix64(self.seed) ^ self.stream)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.key))

    def spawn(self, stream: int) -> "RandomSource":
        """Child source for task ``stream``; independent of this source's own draws."""
        return RandomSource(self.seed, splitmix64(self.stream ^ (stream * GOLDEN & MASK64)))


def as_generator(rng) -> np.random.Generator:
    """Accept a RandomSource, a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RandomSource):
        return rng.generator()
    if rng is None:
        return RandomSource().generator()
    return RandomSource(int(rng)).generator()
