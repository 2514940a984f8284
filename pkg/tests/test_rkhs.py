import numpy as np
import pytest

import tlonlab.autodiff as ad
from tlonlab.errors import DimensionMismatch, NotPositiveDefinite
from tlonlab.rkhs import (
    ConditionalDataset,
    GaussianKernel,
    LinearKernel,
    ceod,
    ceod_node,
    median_bandwidth,
    mmd2,
)


def hs_linear_oracle(xp, yp, xq, yq, lam):
    """Explicit finite-dimensional conditional-operator discrepancy.

    Materializes the linear-kernel feature maps (the data matrices) and
    evaluates || Phi_p M_p Ups_p^T - Phi_q M_q Ups_q^T ||_F^2 directly.
    Written independently of the trace-formula implementation.
    """

    def operator(x, y):
        n = x.shape[0]
        k = x @ x.T
        m = np.linalg.inv(k + lam * n * np.eye(n))
        return y.T @ m @ x

    d = operator(xp, yp) - operator(xq, yq)
    return float(np.sum(d * d))


def _random_pair(rng):
    n1, n2 = rng.integers(2, 7), rng.integers(2, 7)
    dx, dy = rng.integers(1, 4), rng.integers(1, 4)
    xp, yp = rng.standard_normal((n1, dx)), rng.standard_normal((n1, dy))
    xq, yq = rng.standard_normal((n2, dx)), rng.standard_normal((n2, dy))
    return xp, yp, xq, yq


def test_gram_single_point():
    k = GaussianKernel(1.0)
    assert np.array_equal(k.gram(np.zeros((1, 2)), np.zeros((1, 2))), np.ones((1, 1)))


def test_gram_known_distance():
    gamma = 0.7
    k = GaussianKernel(gamma)
    a = np.array([[0.0]])
    b = np.array([[gamma * np.sqrt(2.0)]])
    assert k.gram(a, b)[0, 0] == pytest.approx(np.exp(-1.0))


def test_gram_range_and_symmetry():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((12, 3))
    g = GaussianKernel(1.3).gram(a, a)
    assert np.all(g > 0.0) and np.all(g <= 1.0)
    assert np.allclose(g, g.T)
    assert np.allclose(np.diag(g), 1.0)


def test_gram_dim_mismatch():
    with pytest.raises(DimensionMismatch):
        GaussianKernel(1.0).gram(np.ones((2, 2)), np.ones((2, 3)))


def test_median_bandwidth_cases():
    assert median_bandwidth(np.array([[0.0], [3.0]])) == pytest.approx(3.0)
    assert median_bandwidth(np.ones((4, 2))) == 1.0  # degenerate fallback
    # row set {0, 1, 10}: pairwise distances {1, 9, 10}, median 9
    assert median_bandwidth(np.array([[0.0], [1.0], [10.0]])) == pytest.approx(9.0)


def test_mmd2_identical_sets():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((10, 2))
    assert abs(mmd2(a, a.copy(), GaussianKernel(1.0))) < 1e-12


def test_mmd2_nonnegative():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.standard_normal((rng.integers(2, 10), 3))
        b = rng.standard_normal((rng.integers(2, 10), 3))
        assert mmd2(a, b, GaussianKernel(0.8)) >= -1e-12


def test_mmd2_singletons_hand_value():
    gamma = 1.1
    a = np.zeros((1, 1))
    b = np.array([[gamma * np.sqrt(2.0)]])
    assert mmd2(a, b, GaussianKernel(gamma)) == pytest.approx(2.0 - 2.0 * np.exp(-1.0))


def test_ceod_identical_datasets_zero():
    rng = np.random.default_rng(3)
    for n in (2, 8, 64):
        x = rng.standard_normal((n, 3))
        y = rng.standard_normal((n, 2))
        p = ConditionalDataset(x, y)
        v, _ = ceod(p, ConditionalDataset(x.copy(), y.copy()), 1e-3, GaussianKernel(1.0), GaussianKernel(1.0))
        assert abs(v) < 1e-10


def test_ceod_swap_symmetry_and_nonnegativity():
    rng = np.random.default_rng(4)
    kx, ky = GaussianKernel(1.2), GaussianKernel(0.9)
    for _ in range(20):
        xp, yp, xq, yq = _random_pair(rng)
        p, q = ConditionalDataset(xp, yp), ConditionalDataset(xq, yq)
        v1, _ = ceod(p, q, 1e-2, kx, ky)
        v2, _ = ceod(q, p, 1e-2, kx, ky)
        assert abs(v1 - v2) < 1e-12 * max(1.0, abs(v1))
        assert v1 >= -1e-9


def test_ceod_linear_kernel_oracle_100_instances():
    rng = np.random.default_rng(5)
    lin = LinearKernel()
    for _ in range(100):
        xp, yp, xq, yq = _random_pair(rng)
        lam = 10.0 ** rng.uniform(-3, 0)
        v, _ = ceod(ConditionalDataset(xp, yp), ConditionalDataset(xq, yq), lam, lin, lin)
        assert abs(v - hs_linear_oracle(xp, yp, xq, yq, lam)) < 1e-9


def test_ceod_row_permutation_invariance():
    rng = np.random.default_rng(6)
    xp, yp, xq, yq = _random_pair(rng)
    p = ConditionalDataset(xp, yp)
    kx, ky = GaussianKernel(1.0), GaussianKernel(1.0)
    v1, _ = ceod(p, ConditionalDataset(xq, yq), 1e-2, kx, ky)
    perm = rng.permutation(xq.shape[0])
    v2, _ = ceod(p, ConditionalDataset(xq[perm], yq[perm]), 1e-2, kx, ky)
    assert v1 == pytest.approx(v2, rel=1e-12)


def test_ceod_lambda_decay_rate():
    rng = np.random.default_rng(7)
    xp, yp, xq, yq = _random_pair(rng)
    p, q = ConditionalDataset(xp, yp), ConditionalDataset(xq, yq)
    kx, ky = GaussianKernel(1.0), GaussianKernel(1.0)
    va, _ = ceod(p, q, 1e3, kx, ky)
    vb, _ = ceod(p, q, 1e4, kx, ky)
    assert va / vb == pytest.approx(100.0, rel=0.05)


def test_ceod_small_lambda_not_positive_definite():
    # lam = 0 leaves the PSD Gram singular for duplicated rows
    x = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    y = np.ones((3, 1))
    p = ConditionalDataset(x, y)
    with pytest.raises(NotPositiveDefinite):
        ceod(p, p, 0.0, GaussianKernel(1.0), GaussianKernel(1.0))


def test_ceod_workspace_contents():
    rng = np.random.default_rng(8)
    xp, yp, xq, yq = _random_pair(rng)
    p, q = ConditionalDataset(xp, yp), ConditionalDataset(xq, yq)
    _, ws = ceod(p, q, 1e-2, GaussianKernel(1.0), GaussianKernel(1.0))
    assert ws.k_pp.shape == (p.n, p.n)
    assert ws.k_qp.shape == (q.n, p.n)
    assert ws.l_pq.shape == (p.n, q.n)
    assert np.allclose(np.diag(ws.k_pp), 1.0)
    assert np.all(ws.k_pp <= 1.0 + 1e-12)


def test_ceod_node_matches_plain_value():
    rng = np.random.default_rng(9)
    xp, yp, xq, yq = _random_pair(rng)
    p = ConditionalDataset(xp, yp)
    kx, ky = GaussianKernel(1.1), GaussianKernel(0.8)
    v_plain, _ = ceod(p, ConditionalDataset(xq, yq), 1e-2, kx, ky)
    v_node = float(ceod_node(p, xq, yq, 1e-2, kx, ky).data)
    assert v_node == pytest.approx(v_plain, rel=1e-9)


def test_ceod_node_gradient_matches_fd():
    rng = np.random.default_rng(10)
    xp = rng.standard_normal((4, 2))
    yp = rng.standard_normal((4, 1))
    xq = rng.standard_normal((4, 2))
    yq = rng.standard_normal((4, 1))
    p = ConditionalDataset(xp, yp)
    kx, ky = GaussianKernel(1.0), GaussianKernel(1.0)

    tape = ad.Tape()
    yq_t = tape.watch(yq.copy())
    loss = ceod_node(p, xq, yq_t, 1e-2, kx, ky)
    g = ad.backward(tape, loss)[yq_t.node]

    h = 1e-6
    for i in range(4):
        yp_ = yq.copy()
        yp_[i, 0] += h
        ym_ = yq.copy()
        ym_[i, 0] -= h
        fd = (
            float(ceod_node(p, xq, yp_, 1e-2, kx, ky).data)
            - float(ceod_node(p, xq, ym_, 1e-2, kx, ky).data)
        ) / (2 * h)
        assert abs(g[i, 0] - fd) <= 1e-4 * (1.0 + abs(fd))


def test_ceod_node_gradient_zero_at_minimum():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((5, 2))
    y = rng.standard_normal((5, 2))
    p = ConditionalDataset(x, y)
    tape = ad.Tape()
    yq_t = tape.watch(y.copy())
    loss = ceod_node(p, x.copy(), yq_t, 1e-2, GaussianKernel(1.0), GaussianKernel(1.0))
    g = ad.backward(tape, loss)[yq_t.node]
    assert np.abs(g).max() < 1e-8


def test_ceod_node_detached_inputs_zero_gradients():
    rng = np.random.default_rng(12)
    xp, yp, xq, yq = _random_pair(rng)
    p = ConditionalDataset(xp, yp)
    tape = ad.Tape()
    w = tape.watch(np.ones((2, 2)))  # unrelated leaf
    loss = ceod_node(p, xq, yq, 1e-2, GaussianKernel(1.0), GaussianKernel(1.0))
    assert loss.node is None  # fully constant graph
    g = ad.backward(tape, loss)
    assert np.array_equal(g[w.node], np.zeros((2, 2)))
