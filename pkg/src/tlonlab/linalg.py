"""Dense symmetric linear algebra: Cholesky, SPD solves, Jacobi eigensolver.

Everything works on plain float64 numpy arrays.  Matrices are expected in
C (row-major) layout; inputs are validated, never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite
from .kernels.linalg import cholesky_kernel, jacobi_eig_kernel, solve_cholesky_kernel

JACOBI_MAX_SWEEPS = 100
JACOBI_REL_TOL = 1e-12
SYMMETRY_REL_TOL = 1e-10


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor with L @ L.T = A + jitter*I."""

    lower: np.ndarray
    size: int


@dataclass(frozen=True)
class EigDecomposition:
    """Eigenvalues sorted descending; vectors[:, i] is the unit eigenvector."""

    values: np.ndarray
    vectors: np.ndarray


def _as_square(a: np.ndarray, what: str) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{what}: expected a square matrix, got shape {a.shape}")
    return a


def _check_symmetric(a: np.ndarray, what: str) -> None:
    scale = np.abs(a).max()
    if scale == 0.0:
        return
    skew = np.abs(a - a.T).max()
    if skew > SYMMETRY_REL_TOL * scale:
        raise DimensionMismatch(f"{what}: matrix is not symmetric (relative skew {skew / scale:.3e})")


def cholesky(a: np.ndarray, jitter: float = 0.0) -> CholeskyFactor:
    """Factor the SPD matrix a + jitter*I as L L^T.

    Raises NotPositiveDefinite when a pivot goes non-positive, which
    usually means the regularizer or jitter is too small.
    """
    a = _as_square(a, "cholesky")
    _check_symmetric(a, "cholesky")
    if jitter < 0.0:
        raise NotPositiveDefinite(f"cholesky: jitter must be >= 0, got {jitter}")
    if jitter > 0.0:
        a = a + jitter * np.eye(a.shape[0])
    low, bad = cholesky_kernel(np.ascontiguousarray(a))
    if bad >= 0:
        raise NotPositiveDefinite(
            f"cholesky: non-positive pivot at index {bad} (jitter={jitter:g}); "
            "increase the regularizer or jitter"
        )
    return CholeskyFactor(lower=low, size=a.shape[0])


def solve_spd(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b; b may be a vector or a matrix of columns."""
    b = np.asarray(b, dtype=np.float64)
    vector_in = b.ndim == 1
    if vector_in:
        b = b[:, None]
    if b.ndim != 2 or b.shape[0] != factor.size:
        raise DimensionMismatch(
            f"solve_spd: factor size {factor.size} does not match rhs shape {b.shape}"
        )
    x = solve_cholesky_kernel(factor.lower, np.ascontiguousarray(b))
    return x[:, 0] if vector_in else x


def sym_eig(a: np.ndarray) -> EigDecomposition:
    """Full symmetric eigendecomposition by cyclic Jacobi rotation.

    Converges to off-diagonal Frobenius norm < 1e-12 * ||A||_F within a
    100-sweep budget; raises NoConvergence past the budget.
    """
    a = _as_square(a, "sym_eig")
    _check_symmetric(a, "sym_eig")
    values, vectors, converged = jacobi_eig_kernel(
        np.ascontiguousarray(a), JACOBI_MAX_SWEEPS, JACOBI_REL_TOL
    )
    if not converged:
        raise NoConvergence(f"sym_eig: no convergence after {JACOBI_MAX_SWEEPS} sweeps (n={a.shape[0]})")
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    # fix signs so the largest-magnitude component of each vector is positive
    for i in range(vectors.shape[1]):
        col = vectors[:, i]
        k = np.argmax(np.abs(col))
        if col[k] < 0.0:
            vectors[:, i] = -col
    return EigDecomposition(values=values, vectors=vectors)
