"""Deterministic random number generation.

The raw stream is SplitMix64 (state advances by the 64-bit golden-gamma
constant; outputs go through the murmur-style finalizer). Gaussian variates
come from Box-Muller applied to the unit-interval stream. The generator is a
single 64-bit word of state, so per-sample streams can be derived cheaply as
``Rng(dataset_seed ^ sample_id)`` and results are bit-identical across
platforms and thread counts.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / float(1 << 53)


def _finalize(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream with scalar and vectorized draws.

    The vectorized methods produce exactly the stream the scalar methods
    would, and advance the state identically.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def u64(self, n: int) -> np.ndarray:
        """Next *n* raw outputs as a uint64 array (state advances by n)."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(self.state) + steps * np.uint64(_GAMMA)
        self.state = (self.state + n * _GAMMA) & _MASK
        return _finalize(states)

    def uniform(self, n: int | None = None):
        """Uniform draw(s) in [0, 1) with 53-bit resolution."""
        if n is None:
            return (self.next_u64() >> 11) * _INV_2_53
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def gaussian(self, n: int | None = None):
        """Standard normal draw(s) via Box-Muller.

        Consumes raw outputs in pairs: a scalar call advances the state by
        two, an n-element call by ``2 * ceil(n / 2)``.
        """
        if n is None:
            return float(self._gaussian_pairs(1)[0])
        return self._gaussian_pairs(n)

    def _gaussian_pairs(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = (2.0 * np.pi) * u[1::2]
        out = np.empty(2 * m, dtype=np.float64)
        out[0::2] = radius * np.cos(theta)
        out[1::2] = radius * np.sin(theta)
        return out[:n]

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi)."""
        return lo + self.below(hi - lo)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices drawn without replacement from range(n)."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct indices from {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def derive_seed(seed: int, tag: int) -> int:
    """Stable per-purpose seed: one finalizer pass over ``seed ^ tag``."""
    z = (seed ^ tag) & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)
