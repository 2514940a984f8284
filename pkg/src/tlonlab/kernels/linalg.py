"""Dense symmetric linear-algebra kernels: Cholesky, triangular solves, Jacobi.

All kernels return status codes instead of raising; the wrapping module
translates them into exceptions.
"""

from __future__ import annotations

import math

import numpy as np

from ..backend import njit, pick


# ---------------------------------------------------------------- cholesky

@njit(cache=True)
def cholesky_numba(a):
    """Left-looking Cholesky.  Returns (L, bad_pivot_index or -1)."""
    n = a.shape[0]
    low = np.zeros((n, n))
    for j in range(n):
        s = 0.0
        for k in range(j):
            s += low[j, k] * low[j, k]
        d = a[j, j] - s
        if d <= 0.0:
            return low, j
        ljj = math.sqrt(d)
        low[j, j] = ljj
        for i in range(j + 1, n):
            t = 0.0
            for k in range(j):
                t += low[i, k] * low[j, k]
            low[i, j] = (a[i, j] - t) / ljj
    return low, -1


def cholesky_numpy(a):
    n = a.shape[0]
    low = np.zeros((n, n))
    for j in range(n):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if d <= 0.0:
            return low, j
        ljj = math.sqrt(d)
        low[j, j] = ljj
        if j + 1 < n:
            low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / ljj
    return low, -1


cholesky_kernel = pick(cholesky_numba, cholesky_numpy)


# ------------------------------------------------------- triangular solves

@njit(cache=True)
def solve_cholesky_numba(low, b):
    """Solve (L L^T) x = b for multiple right-hand sides b (n, m)."""
    n, m = b.shape
    x = np.empty((n, m))
    for col in range(m):
        for i in range(n):
            s = b[i, col]
            for k in range(i):
                s -= low[i, k] * x[k, col]
            x[i, col] = s / low[i, i]
        for i in range(n - 1, -1, -1):
            s = x[i, col]
            for k in range(i + 1, n):
                s -= low[k, i] * x[k, col]
            x[i, col] = s / low[i, i]
    return x


def solve_cholesky_numpy(low, b):
    n, m = b.shape
    y = np.empty((n, m))
    for i in range(n):
        y[i] = (b[i] - low[i, :i] @ y[:i]) / low[i, i]
    x = np.empty((n, m))
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - low[i + 1 :, i] @ x[i + 1 :]) / low[i, i]
    return x


solve_cholesky_kernel = pick(solve_cholesky_numba, solve_cholesky_numpy)


# ------------------------------------------------------------- Jacobi eig

@njit(cache=True)
def jacobi_eig_numba(a_in, max_sweeps, rel_tol):
    """Cyclic two-sided Jacobi on a symmetric matrix.

    Returns (values, vectors, converged_flag); vectors are columns.
    Convergence: off-diagonal Frobenius norm <= rel_tol * ||A_in||_F,
    checked before each sweep and once after the final one.
    """
    n = a_in.shape[0]
    a = a_in.copy()
    v = np.eye(n)
    tol = rel_tol * math.sqrt(np.sum(a_in * a_in))
    converged = False
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += 2.0 * a[i, j] * a[i, j]
        if math.sqrt(off) <= tol:
            converged = True
            break
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    values = np.empty(n)
    for i in range(n):
        values[i] = a[i, i]
    return values, v, converged


def jacobi_eig_numpy(a_in, max_sweeps, rel_tol):
    n = a_in.shape[0]
    a = a_in.copy()
    v = np.eye(n)
    tol = rel_tol * math.sqrt(np.sum(a_in * a_in))
    converged = False
    for sweep in range(max_sweeps + 1):
        off = math.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= tol:
            converged = True
            break
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v, converged


jacobi_eig_kernel = pick(jacobi_eig_numba, jacobi_eig_numpy)
