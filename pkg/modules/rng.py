"""Seeded random streams.

A stream is keyed by (seed, stream_id, replication) through a splitmix64
avalanche mix and drives a numpy PCG64 generator, which is bit-reproducible
across platforms. Uniforms are drawn in blocks and consumed in order, so the
sequence seen by a simulation depends only on the key.
"""

from __future__ import annotations

import math

import numpy as np

from config import RNG_BLOCK

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_key(seed: int, stream_id: int, replication: int = 0) -> int:
    h = splitmix64(seed & _MASK64)
    h = splitmix64(h ^ (stream_id & _MASK64))
    return splitmix64(h ^ (replication & _MASK64))


class RngStream:
    def __init__(self, seed: int, stream_id: int, replication: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.replication = int(replication)
        self._gen = np.random.Generator(np.random.PCG64(mix_key(seed, stream_id, replication)))
        self._buf: list[float] = []
        self._pos = 0
        self.draws = 0

    def uniform(self) -> float:
        """Next U in [0, 1)."""
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(RNG_BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        self.draws += 1
        return u

    def exponential(self, rate: float) -> float:
        """Inverse CDF: -ln(1 - U) / rate."""
        return -math.log1p(-self.uniform()) / rate

    def spawn(self, replication: int) -> RngStream:
        """Independent stream for another replication under the same (seed, stream_id)."""
        return RngStream(self.seed, self.stream_id, replication)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, replication={self.replication})"
