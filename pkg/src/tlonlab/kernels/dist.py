"""Pairwise squared Euclidean distances, computed without cancellation."""

from __future__ import annotations

import numpy as np

from ..backend import njit, pick


@njit(cache=True)
def sqdist_numba(a, b):
    m, d = a.shape
    n = b.shape[0]
    out = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out


def sqdist_numpy(a, b):
    m = a.shape[0]
    out = np.empty((m, b.shape[0]))
    step = max(1, (8 << 20) // max(1, b.size * 8))  # ~8 MB temp per chunk
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        out[lo:hi] = ((a[lo:hi, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return out


sqdist_kernel = pick(sqdist_numba, sqdist_numpy)
