"""Kernel-embedding statistics: Gram matrices, MMD and the conditional
embedding operator discrepancy (CEOD).

CEOD between datasets (X_p, Y_p) and (X_q, Y_q) is the squared
Hilbert-Schmidt distance between the two regularized empirical conditional
embedding operators, evaluated purely through Gram matrices:

    Tr[M_p L_pp M_p K_pp] + Tr[M_q L_qq M_q K_qq] - 2 Tr[M_p L_pq M_q K_qp]

with M_s = (K_ss + lam * n_s * I)^{-1}, K built from inputs and L from
outputs.  ``ceod`` evaluates this with exact pairwise Grams; ``ceod_node``
builds the same expression from autodiff primitives so gradients flow into
the q-side features and outputs through the kernel entries and the
regularized solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionMismatch, InvalidParams
from .kernels.dist import sqdist_kernel
from .linalg import CholeskyFactor, cholesky, solve_spd

DEFAULT_CEOD_LAMBDA = 1e-3


@dataclass(frozen=True)
class GaussianKernel:
    """k(x, x') = exp(-||x - x'||^2 / (2 gamma^2))."""

    bandwidth: float

    def __post_init__(self):
        if self.bandwidth <= 0.0:
            raise InvalidParams(f"GaussianKernel: bandwidth must be positive, got {self.bandwidth}")

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a, b = _check_pair(a, b)
        return np.exp(sqdist_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b))
                      * (-0.5 / self.bandwidth**2))

    def gram_node(self, a, b):
        a = _as_matrix_tensor(a)
        b = _as_matrix_tensor(b)
        _check_pair(a.data, b.data)
        sq_a = ad.tsum(ad.square(a), axis=1, keepdims=True)
        sq_b = ad.tsum(ad.square(b), axis=1, keepdims=True)
        dist = ad.sub(ad.add(sq_a, ad.transpose(sq_b)), ad.scale(ad.matmul(a, ad.transpose(b)), 2.0))
        return ad.exp(ad.scale(dist, -0.5 / self.bandwidth**2))


@dataclass(frozen=True)
class LinearKernel:
    """k(x, x') = x . x'; used by the finite-dimensional CEOD oracle."""

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a, b = _check_pair(a, b)
        return a @ b.T

    def gram_node(self, a, b):
        a = _as_matrix_tensor(a)
        b = _as_matrix_tensor(b)
        _check_pair(a.data, b.data)
        return ad.matmul(a, ad.transpose(b))


def _as_matrix_tensor(x) -> ad.Tensor:
    t = x if isinstance(x, ad.Tensor) else ad.Tensor(np.asarray(x, dtype=np.float64))
    if t.data.ndim != 2:
        raise DimensionMismatch(f"expected a (n, d) matrix, got shape {t.data.shape}")
    return t


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"gram: feature dims differ, shapes {a.shape} and {b.shape}")
    return a, b


def median_bandwidth(a: np.ndarray) -> float:
    """Median pairwise distance over distinct row pairs; 1.0 if degenerate."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 2:
        raise DimensionMismatch(f"median_bandwidth: need at least 2 rows, got shape {a.shape}")
    sq = sqdist_kernel(np.ascontiguousarray(a), np.ascontiguousarray(a))
    iu = np.triu_indices(a.shape[0], k=1)
    med = float(np.median(np.sqrt(sq[iu])))
    return med if med > 0.0 else 1.0


def mmd2(a: np.ndarray, b: np.ndarray, kernel) -> float:
    """Biased V-statistic for squared MMD between two sample sets."""
    a, b = _check_pair(a, b)
    return float(kernel.gram(a, a).mean() - 2.0 * kernel.gram(a, b).mean() + kernel.gram(b, b).mean())


@dataclass(frozen=True)
class ConditionalDataset:
    """Paired conditioning inputs X (n, dx) and outputs Y (n, dy)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DimensionMismatch(
                f"ConditionalDataset: X {x.shape} and Y {y.shape} must share the row count"
            )
        if x.shape[0] < 2:
            raise DimensionMismatch("ConditionalDataset: need at least 2 samples")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class CeodWorkspace:
    """Grams, regularized factors and cached solves behind one CEOD value."""

    k_pp: np.ndarray
    k_qq: np.ndarray
    k_qp: np.ndarray
    l_pp: np.ndarray
    l_qq: np.ndarray
    l_pq: np.ndarray
    factor_p: CholeskyFactor
    factor_q: CholeskyFactor
    solve_p_l: np.ndarray
    solve_p_k: np.ndarray
    solve_q_l: np.ndarray
    solve_q_k: np.ndarray
    solve_p_lpq: np.ndarray
    solve_q_kqp: np.ndarray


def ceod(
    p: ConditionalDataset,
    q: ConditionalDataset,
    lam: float,
    kernel_x,
    kernel_y,
) -> tuple[float, CeodWorkspace]:
    """CEOD via exact Gram matrices and Cholesky solves.

    Raises NotPositiveDefinite when lam is too small to regularize the
    Gram matrices.
    """
    if p.x.shape[1] != q.x.shape[1] or p.y.shape[1] != q.y.shape[1]:
        raise DimensionMismatch(
            f"ceod: feature dims differ between datasets: X {p.x.shape} vs {q.x.shape}, "
            f"Y {p.y.shape} vs {q.y.shape}"
        )
    k_pp = kernel_x.gram(p.x, p.x)
    k_qq = kernel_x.gram(q.x, q.x)
    k_qp = kernel_x.gram(q.x, p.x)
    l_pp = kernel_y.gram(p.y, p.y)
    l_qq = kernel_y.gram(q.y, q.y)
    l_pq = kernel_y.gram(p.y, q.y)
    factor_p = cholesky(k_pp + (lam * p.n) * np.eye(p.n))
    factor_q = cholesky(k_qq + (lam * q.n) * np.eye(q.n))
    solve_p_l = solve_spd(factor_p, l_pp)
    solve_p_k = solve_spd(factor_p, k_pp)
    solve_q_l = solve_spd(factor_q, l_qq)
    solve_q_k = solve_spd(factor_q, k_qq)
    solve_p_lpq = solve_spd(factor_p, l_pq)
    solve_q_kqp = solve_spd(factor_q, k_qp)
    t1 = float(np.sum(solve_p_l * solve_p_k.T))
    t2 = float(np.sum(solve_q_l * solve_q_k.T))
    t3 = float(np.sum(solve_p_lpq * solve_q_kqp.T))
    value = t1 + t2 - 2.0 * t3
    ws = CeodWorkspace(
        k_pp, k_qq, k_qp, l_pp, l_qq, l_pq, factor_p, factor_q,
        solve_p_l, solve_p_k, solve_q_l, solve_q_k, solve_p_lpq, solve_q_kqp,
    )
    return value, ws


def ceod_node(
    p: ConditionalDataset,
    q_x,
    q_y,
    lam: float,
    kernel_x,
    kernel_y,
) -> ad.Tensor:
    """CEOD as a tape scalar; q_x / q_y may be tape tensors, p is constant.

    Gradients flow through the q-side Gram entries and the regularized
    solves; the pure-p term contributes value but no gradient.
    """
    q_x = _as_matrix_tensor(q_x)
    q_y = _as_matrix_tensor(q_y)
    if p.x.shape[1] != q_x.data.shape[1] or p.y.shape[1] != q_y.data.shape[1]:
        raise DimensionMismatch(
            f"ceod_node: feature dims differ: X {p.x.shape} vs {q_x.data.shape}, "
            f"Y {p.y.shape} vs {q_y.data.shape}"
        )
    if q_x.data.shape[0] != q_y.data.shape[0]:
        raise DimensionMismatch(
            f"ceod_node: q side row counts differ: {q_x.data.shape} vs {q_y.data.shape}"
        )
    n_p = p.x.shape[0]
    n_q = q_x.data.shape[0]
    p_x = ad.Tensor(p.x)
    p_y = ad.Tensor(p.y)

    k_pp = kernel_x.gram_node(p_x, p_x)
    k_qq = kernel_x.gram_node(q_x, q_x)
    k_qp = kernel_x.gram_node(q_x, p_x)
    l_pp = kernel_y.gram_node(p_y, p_y)
    l_qq = kernel_y.gram_node(q_y, q_y)
    l_pq = kernel_y.gram_node(p_y, q_y)

    reg_p = ad.add(k_pp, (lam * n_p) * np.eye(n_p))
    reg_q = ad.add(k_qq, (lam * n_q) * np.eye(n_q))

    t1 = ad.trace(ad.matmul(ad.solve_spd_node(reg_p, l_pp), ad.solve_spd_node(reg_p, k_pp)))
    t2 = ad.trace(ad.matmul(ad.solve_spd_node(reg_q, l_qq), ad.solve_spd_node(reg_q, k_qq)))
    t3 = ad.trace(ad.matmul(ad.solve_spd_node(reg_p, l_pq), ad.solve_spd_node(reg_q, k_qp)))
    return ad.add(ad.add(t1, t2), ad.scale(t3, -2.0))
