"""Counter-based, splittable random streams.

Every stream is a 64-bit ``key`` plus a position counter. The i-th word of a
stream (i counted from 0) is the SplitMix64 output function evaluated at
counter ``i + 1``::

    z = key + (i + 1) * 0x9E3779B97F4A7C15           (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    word = z ^ (z >> 31)

Child streams never share state with their parent: ``child(label)`` derives a
new key as ``mix64(key ^ fnv1a64(label))``, so adding a consumer never shifts
the draws of an existing one. Floats use the top 53 bits of a word; normals
use Box-Muller on consecutive word pairs.
"""

from __future__ import annotations

import numpy as np

from . import kernels

_MASK = (1 << 64) - 1
_TWO_NEG_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK
    return h


class CounterRNG:
    """A deterministic random stream identified by a 64-bit key."""

    def __init__(self, seed: int | np.uint64, *, _key: int | None = None) -> None:
        self.key = int(_key) if _key is not None else mix64(int(seed) & _MASK)
        self.counter = 0

    def __repr__(self) -> str:
        return f"CounterRNG(key=0x{self.key:016x}, counter={self.counter})"

    def child(self, *labels: object) -> "CounterRNG":
        """Independent stream for ``labels`` (strings or ints); parent state untouched."""
        key = self.key
        for label in labels:
            key = mix64(key ^ fnv1a64(str(label)))
        return CounterRNG(0, _key=key)

    def words(self, n: int) -> np.ndarray:
        out = kernels.splitmix_block(np.uint64(self.key), self.counter, n)
        self.counter += n
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` floats in [0, 1)."""
        return (self.words(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))  # 1 - u lies in (0, 1]
        theta = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def choose(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, uniformly, in random order.

        Ranks ``n`` fresh uniform keys with a stable sort; ties (probability
        ~n**2 / 2**54) resolve by index.
        """
        if k > n:
            raise ValueError(f"cannot choose {k} of {n}")
        keys = self.uniform(n)
        return np.argsort(keys, kind="stable")[:k]

    def integers(self, high: int, n: int) -> np.ndarray:
        """``n`` integers in [0, high) by scaling 53-bit uniforms."""
        return np.floor(self.uniform(n) * high).astype(np.int64)
