"""Portable SplitMix64 streams.

State update: ``s += 0x9E3779B97F4A7C15 (mod 2**64)``; output mix::

    z = s
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z ^= z >> 31

Doubles take the top 53 bits (``(z >> 11) * 2**-53``). Normals use the
Box-Muller pair ``sqrt(-2 ln(1-u1)) * (cos 2πu2, sin 2πu2)``, interleaved.
Named streams are derived from a run seed by fixed offsets so that model
init, training noise, data sampling and evaluation never share draws.
"""
from __future__ import annotations

import numpy as np

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

STREAMS = {"init": 1, "noise": 2, "data": 3, "eval": 4, "render": 5, "latent": 6}


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * MIX1) & MASK
    z = ((z ^ (z >> 27)) * MIX2) & MASK
    return z ^ (z >> 31)


def derive(seed: int, *keys: int) -> int:
    s = seed & MASK
    for k in keys:
        s = mix64(s + (k & MASK) * GAMMA)
    return s


class Rng:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK

    @classmethod
    def stream(cls, seed: int, name: str, *extra: int) -> "Rng":
        return cls(derive(seed, STREAMS[name], *extra))

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GAMMA) & MASK
        return z

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        t = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(t)
        z[1::2] = r * np.sin(t)
        z = z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, high: int, size=None):
        """Uniform integers in [0, high)."""
        if high < 1:
            raise ValueError("integers() needs high >= 1")
        u = self.uniform(size)
        if size is None:
            return min(int(u * high), high - 1)
        return np.minimum((u * high).astype(np.int64), high - 1)
