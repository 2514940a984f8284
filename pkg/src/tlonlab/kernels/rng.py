"""xoshiro256** block generation.

The generator state is four uint64 words seeded through SplitMix64.  Both
backends produce bit-identical uint64 streams (integer arithmetic is
exact), so random fields and weight initializations agree across backends.
"""

from __future__ import annotations

import numpy as np

from ..backend import njit, pick

_MASK = (1 << 64) - 1
SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_SM_MUL1 = 0xBF58476D1CE4E5B9
_SM_MUL2 = 0x94D049BB133111EB


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (next_state, output)."""
    state = (state + SPLITMIX_GAMMA) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * _SM_MUL1) & _MASK
    z = ((z ^ (z >> 27)) * _SM_MUL2) & _MASK
    return state, z ^ (z >> 31)


def seed_state(seed: int, stream: int = 0) -> np.ndarray:
    """xoshiro256** state for (seed, stream), via SplitMix64 on seed+stream."""
    sm = (int(seed) + int(stream)) & _MASK
    words = np.empty(4, dtype=np.uint64)
    for i in range(4):
        sm, w = splitmix64(sm)
        words[i] = w
    if not words.any():  # all-zero state is the one forbidden xoshiro state
        words[0] = np.uint64(1)
    return words


@njit(cache=True)
def fill_u64_numba(state, out):
    s0 = state[0]
    s1 = state[1]
    s2 = state[2]
    s3 = state[3]
    five = np.uint64(5)
    nine = np.uint64(9)
    k7 = np.uint64(7)
    k57 = np.uint64(57)
    k17 = np.uint64(17)
    k45 = np.uint64(45)
    k19 = np.uint64(19)
    for i in range(out.shape[0]):
        x = s1 * five
        out[i] = ((x << k7) | (x >> k57)) * nine
        t = s1 << k17
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << k45) | (s3 >> k19)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3


def fill_u64_numpy(state, out):
    s0, s1, s2, s3 = (int(state[0]), int(state[1]), int(state[2]), int(state[3]))
    for i in range(out.shape[0]):
        x = (s1 * 5) & _MASK
        out[i] = (((x << 7) & _MASK | (x >> 57)) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) & _MASK) | (s3 >> 19)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3


fill_u64_kernel = pick(fill_u64_numba, fill_u64_numpy)


def u64_to_unit(block: np.ndarray) -> np.ndarray:
    """Map uint64 draws to doubles in (0, 1] with 53-bit resolution."""
    return ((block >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def box_muller(block: np.ndarray) -> np.ndarray:
    """Standard normals from an even-length uint64 block, two per pair."""
    u1 = u64_to_unit(block[0::2])
    u2 = u64_to_unit(block[1::2])
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * np.pi) * u2
    z = np.empty(block.size, dtype=np.float64)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z
