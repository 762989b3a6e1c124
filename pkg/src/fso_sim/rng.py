"""Deterministic named random substreams.

Every stream is a numpy ``PCG64`` generator seeded from a ``SeedSequence``
built out of ``(master_seed, crc32(tag))``.  A stream therefore depends only
on the master seed and its tag, so consuming one stream never shifts the
draws of another.
"""

from __future__ import annotations

import zlib
from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")

MASK64 = (1 << 64) - 1

STREAM_TAGS = (
    "resource_placement",
    "expertise",
    "activities",
    "sickness",
    "strategy_choice",
    "movement",
)


def tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


class Stream:
    """A single 64-bit PRNG substream with the handful of draws the model needs."""

    def __init__(self, master_seed: int, tag: str):
        self.master_seed = master_seed & MASK64
        self.tag = tag
        seq = np.random.SeedSequence([self.master_seed, tag_code(tag)])
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def random(self) -> float:
        return float(self._gen.random())

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"randbelow needs n > 0, got {n}")
        return int(self._gen.integers(0, n))

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range [lo, hi]."""
        return int(self._gen.integers(lo, hi + 1))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def choice(self, seq: Sequence[T]) -> T:
        return seq[self.randbelow(len(seq))]

    def sample(self, seq: Sequence[T], k: int) -> list[T]:
        """k distinct elements, without replacement, in draw order."""
        if not 0 <= k <= len(seq):
            raise ValueError(f"cannot sample {k} from {len(seq)}")
        pool = list(seq)
        out = []
        for i in range(k):
            j = i + self.randbelow(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
            out.append(pool[i])
        return out


class RngStreams:
    def __init__(self, master_seed: int):
        self.master_seed = master_seed & MASK64
        self._streams = {tag: Stream(self.master_seed, tag) for tag in STREAM_TAGS}

    def __getitem__(self, tag: str) -> Stream:
        return self._streams[tag]

    @property
    def resource_placement(self) -> Stream:
        return self._streams["resource_placement"]

    @property
    def expertise(self) -> Stream:
        return self._streams["expertise"]

    @property
    def activities(self) -> Stream:
        return self._streams["activities"]

    @property
    def sickness(self) -> Stream:
        return self._streams["sickness"]

    @property
    def strategy_choice(self) -> Stream:
        return self._streams["strategy_choice"]

    @property
    def movement(self) -> Stream:
        return self._streams["movement"]
