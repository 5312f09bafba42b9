"""Numba kernels for bulk splitmix64 draws.

State is carried as ``np.uint64`` so every multiply wraps modulo 2**64.
Each kernel returns the advanced state; callers store it back.
"""

import numpy as np
from numba import njit

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
MIX_2 = np.uint64(0x94D049BB133111EB)
INV_2_53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def splitmix64_next_nb(state):
    """Advance once; returns (new_state, output)."""
    s = state + GOLDEN_GAMMA
    z = s
    z = (z ^ (z >> np.uint64(30))) * MIX_1
    z = (z ^ (z >> np.uint64(27))) * MIX_2
    z = z ^ (z >> np.uint64(31))
    return s, z


@njit(cache=True)
def uniform_fill_nb(state, out):
    """Fill ``out`` with uniforms in [0, 1) as (next64 >> 11) * 2**-53."""
    s = state
    for i in range(out.shape[0]):
        s, z = splitmix64_next_nb(s)
        out[i] = np.float64(z >> np.uint64(11)) * INV_2_53
    return s


@njit(cache=True)
def bounded_nb(state, n):
    """Unbiased integer in [0, n) by rejection; returns (new_state, value)."""
    nn = np.uint64(n)
    threshold = (np.uint64(0) - nn) % nn
    s = state
    while True:
        s, z = splitmix64_next_nb(s)
        if z >= threshold:
            return s, np.int64(z % nn)


@njit(cache=True)
def permutation_nb(state, out):
    """Fisher-Yates over ``out`` (pre-filled with 0..n-1), high index first."""
    s = state
    for i in range(out.shape[0] - 1, 0, -1):
        s, j = bounded_nb(s, i + 1)
        tmp = out[i]
        out[i] = out[j]
        out[j] = tmp
    return s


@njit(cache=True)
def normal_fill_nb(state, out, truncate):
    """Fill ``out`` with standard normals (Box-Muller, cosine branch).

    When ``truncate`` > 0, draws with |z| > truncate are rejected and redrawn.
    """
    s = state
    two_pi = 2.0 * np.pi
    for i in range(out.shape[0]):
        while True:
            s, z1 = splitmix64_next_nb(s)
            s, z2 = splitmix64_next_nb(s)
            u1 = np.float64(z1 >> np.uint64(11)) * INV_2_53
            u2 = np.float64(z2 >> np.uint64(11)) * INV_2_53
            value = np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(two_pi * u2)
            if truncate <= 0.0 or abs(value) <= truncate:
                out[i] = value
                break
    return s
