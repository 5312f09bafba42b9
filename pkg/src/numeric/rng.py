"""Deterministic splitmix64 random stream.

Scalar draws run in plain Python integers; bulk draws (permutations, uniform
and normal arrays) go through the numba kernels in ``src.numeric.nb.rng_nb``.
Both paths implement the same recurrence, so a stream can mix them freely.
"""
import math
from typing import Union

import numpy as np

from src.numeric.nb.rng_nb import (
    normal_fill_nb,
    permutation_nb,
    uniform_fill_nb,
)
from src.types import FloatArray, IntArray

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX_1 = 0xBF58476D1CE4E5B9
_MIX_2 = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

Tag = Union[str, int]


def _fnv1a(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


class Rng:
    """splitmix64 generator with a single 64-bit unsigned state.

    Example::

        rng = Rng(0)
        rng.next64()            # 0xE220A8397B1DCDAF
        Rng.derive(7, "mask", 12).permutation(64)
    """

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    @classmethod
    def derive(cls, seed: int, *tags: Tag) -> "Rng":
        """Independent stream for a purpose, e.g. ``derive(seed, "epoch", 3)``.

        The state is the FNV-1a hash of ``"<seed>/<tag>/<tag>..."``, so
        streams with different tags never share a starting point by accident.
        """
        key = "/".join([str(int(seed))] + [str(t) for t in tags])
        return cls(_fnv1a(key))

    def __repr__(self) -> str:
        return f"Rng(state=0x{self.state:016X})"

    # -- scalar draws ---------------------------------------------------

    def next64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX_1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX_2) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Float in [0, 1) from the top 53 bits."""
        return (self.next64() >> 11) * _INV_2_53

    def bounded(self, n: int) -> int:
        """Integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError(f"bounded() needs n >= 1, got {n}")
        threshold = ((1 << 64) - n) % n
        while True:
            z = self.next64()
            if z >= threshold:
                return z % n

    def normal(self) -> float:
        """Standard normal via Box-Muller (cosine branch)."""
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def choice(self, options: list):
        return options[self.bounded(len(options))]

    # -- bulk draws -----------------------------------------------------

    def permutation(self, n: int) -> IntArray:
        """Fisher-Yates permutation of ``0..n-1``."""
        if n < 0:
            raise ValueError(f"permutation() needs n >= 0, got {n}")
        out = np.arange(n, dtype=np.int64)
        self.state = int(permutation_nb(np.uint64(self.state), out))
        return out

    def uniform_array(self, n: int) -> FloatArray:
        out = np.empty(n, dtype=np.float64)
        self.state = int(uniform_fill_nb(np.uint64(self.state), out))
        return out

    def normal_array(self, shape, std: float = 1.0, truncate: float = 0.0) -> FloatArray:
        """Normals scaled by ``std``; ``truncate`` > 0 rejects beyond that many sigmas."""
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
        out = np.empty(int(np.prod(shape, dtype=np.int64)), dtype=np.float64)
        self.state = int(normal_fill_nb(np.uint64(self.state), out, float(truncate)))
        return (out * std).reshape(shape)


def rng_next_uniform(rng: Rng) -> float:
    return rng.uniform()


def rng_shuffle(rng: Rng, n: int) -> IntArray:
    return rng.permutation(n)
