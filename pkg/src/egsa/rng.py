"""Deterministic pseudo-random generator with published constants.

Everything stochastic in this package (scene generation, weight init,
epoch shuffling) draws from Xorshift64Star so that a seed fully pins the
byte-level output, and a reimplementation in another language can match
it exactly. Constants are the standard xorshift64* / splitmix64 ones.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_XS_MULT = 0x2545F4914F6CDD1D
_SM_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step: mixes a 64-bit value into a new 64-bit value."""
    z = (x + _SM_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Xorshift64Star:
    """xorshift64* generator (shifts 12/25/27, multiplier 0x2545F4914F6CDD1D).

    The seed is passed through splitmix64 so that small seeds (including 0)
    still produce a valid, well-mixed nonzero state.
    """

    def __init__(self, seed: int):
        state = splitmix64(seed & _MASK64)
        self.state = state if state != 0 else _SM_GAMMA

    def next_u64(self) -> int:
        x = self.state
        x ^= (x >> 12)
        x = (x ^ (x << 25)) & _MASK64
        x ^= (x >> 27)
        self.state = x
        return (x * _XS_MULT) & _MASK64

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, n: int) -> int:
        """Integer in [0, n) by rejection sampling (unbiased)."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        limit = _MASK64 - (_MASK64 + 1) % n
        while True:
            u = self.next_u64()
            if u <= limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0):
        """float32 array of uniforms, filled in C order."""
        n = int(np.prod(shape))
        flat = np.empty(n, dtype=np.float64)
        for i in range(n):
            flat[i] = self.uniform()
        return (lo + (hi - lo) * flat).astype(np.float32).reshape(shape)


def sample_seed(run_seed: int, split: str, index: int) -> int:
    """Per-sample seed: run seed XOR a splitmix64 hash of (split, index)."""
    split_id = {"train": 1, "test": 2}[split]
    return (run_seed ^ splitmix64((split_id << 32) | (index & 0xFFFFFFFF))) & _MASK64
