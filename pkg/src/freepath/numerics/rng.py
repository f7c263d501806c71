"""Counter-based random number streams.

Streams are keyed Philox generators: the pair ``(seed, stream)`` fully
determines the draw sequence, so replicas and flights can be addressed by
index without sequential jump-ahead.  Worker scheduling can never change
what a given replica draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by (seed, stream, jumps).

    ``substream(i)`` addresses disjoint blocks of the same keyed counter
    space (Philox ``jumped``), so per-flight or per-replica substreams are
    O(1) to construct and independent of how much the parent consumed.
    """

    seed: int
    stream: int = 0
    jumps: int = 0
    _gen: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 bits")
        if not (0 <= self.stream < 2**64):
            raise ValueError("stream id must fit in 64 bits")

    def generator(self) -> np.random.Generator:
        """The underlying numpy Generator (cached; draws advance state)."""
        if not self._gen:
            bg = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
            if self.jumps:
                bg = bg.jumped(self.jumps)
            self._gen.append(np.random.Generator(bg))
        return self._gen[0]

    def fresh_generator(self) -> np.random.Generator:
        """A new Generator at this stream's origin, ignoring prior draws."""
        bg = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        if self.jumps:
            bg = bg.jumped(self.jumps)
        return np.random.Generator(bg)

    def substream(self, index: int) -> "RngStream":
        """Disjoint child stream #index (jumped 2^128 counter blocks)."""
        if index < 0:
            raise ValueError("substream index must be nonnegative")
        return RngStream(self.seed, self.stream, self.jumps + index + 1)

    def sibling(self, stream: int) -> "RngStream":
        """Stream with the same seed but a different stream id."""
        return RngStream(self.seed, stream)

    # -- draw helpers ------------------------------------------------------

    def uniform(self, size=None):
        return self.generator().random(size)

    def standard_normal(self, size=None):
        return self.generator().standard_normal(size)

    def exponential(self, size=None):
        """Exp(1) draws via the inverse CDF -log(1 - U)."""
        u = self.generator().random(size)
        return -np.log1p(-u)

    def integers(self, low, high=None, size=None):
        return self.generator().integers(low, high, size)

    def permutation(self, n):
        return self.generator().permutation(n)
