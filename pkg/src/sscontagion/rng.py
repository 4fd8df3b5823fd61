"""Counter-based random streams.

Every draw is a pure function of a 64-bit stream key and a draw index::

    u[k] = (splitmix64(key + (k + 1) * GAMMA) >> 11) * 2**-53

where ``splitmix64`` is the standard SplitMix64 output finalizer. Keys are
derived by folding identifiers through the same mixer, so any single
simulation can be regenerated in isolation, on any platform, in any
language that has wrapping 64-bit integers.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _as_u64(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        return int(part) & MASK64
    data = str(part).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def derive_key(*parts) -> int:
    """Fold identifiers (ints or strings) into one 64-bit stream key."""
    h = 0
    for part in parts:
        h = mix64((h ^ _as_u64(part)) + GAMMA)
    return h


def derive_keys(base: int, indices) -> np.ndarray:
    """Vectorised ``derive_key(..., index)`` continuation from ``base``."""
    idx = np.asarray(indices, dtype=np.uint64)
    z = (np.uint64(base) ^ idx) + np.uint64(GAMMA)
    return _mix_array(z)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def raw64(key: int, start: int, count: int) -> np.ndarray:
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    return _mix_array(np.uint64(key) + idx * np.uint64(GAMMA))


def uniforms(key: int, start: int, count: int) -> np.ndarray:
    """Uniform doubles in [0, 1) for draw indices ``start .. start+count-1``."""
    return (raw64(key, start, count) >> np.uint64(11)).astype(np.float64) * _INV53


class Stream:
    """Sequential reader over one keyed stream.

    Convenience for generators that consume a variable number of draws;
    the values are exactly ``uniforms(key, 0, n)`` read in order.
    """

    def __init__(self, key: int):
        self.key = key
        self.pos = 0

    def uniform(self, n: int) -> np.ndarray:
        out = uniforms(self.key, self.pos, n)
        self.pos += n
        return out

    def normal(self, n: int) -> np.ndarray:
        # Box-Muller, cosine branch only: one normal per uniform pair.
        u = self.uniform(2 * n)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def poisson(self, lam: float, n: int) -> np.ndarray:
        """Poisson counts by inversion (one uniform per count)."""
        u = self.uniform(n)
        out = np.zeros(n, dtype=np.int64)
        if lam <= 0:
            return out
        # cdf table up to a negligible tail
        kmax = int(lam + 12.0 * np.sqrt(lam) + 20)
        k = np.arange(kmax + 1)
        logpmf = k * np.log(lam) - lam - np.cumsum(np.log(np.maximum(k, 1)))
        cdf = np.cumsum(np.exp(logpmf))
        out[:] = np.minimum(np.searchsorted(cdf, u, side="right"), kmax)
        return out

    def integers(self, high: int, n: int) -> np.ndarray:
        """Uniform integers in [0, high) by scaling (bias < 2**-53 * high)."""
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)
