"""Hash folds and the seeded pseudo-random generator shared by all structures.

Every function here is jit-compiled so the simulation kernels can call them
without leaving native code.
"""
import numpy as np
from numba import njit

LINE_SHIFT = 6
LINE_BYTES = 1 << LINE_SHIFT

_LCG_MUL = np.uint64(6364136223846793005)
_LCG_INC = np.uint64(1442695040888963407)
_U11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def fold_bits(x, bits):
    """XOR-fold a non-negative integer into `bits` bits, low chunk first."""
    mask = (1 << bits) - 1
    h = 0
    while x > 0:
        h ^= x & mask
        x >>= bits
    return h


@njit(cache=True)
def hash10(x):
    return fold_bits(x, 10)


@njit(cache=True)
def mix64(x):
    """splitmix64 finaliser; returns a uint64."""
    z = np.uint64(x) + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def lcg_uniform(state):
    """Advance the 64-bit LCG held in ``state[0]`` and return a float in [0, 1)."""
    s = state[0] * _LCG_MUL + _LCG_INC
    state[0] = s
    return float(s >> _U11) * _INV53


def make_rng(seed):
    """LCG state array seeded from an integer."""
    return np.array([mix64(seed)], dtype=np.uint64)
