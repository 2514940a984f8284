import numpy as np
import pytest

import tlonlab.autodiff as ad
from tlonlab.errors import NonScalarOutput, NotPositiveDefinite, ShapeMismatch


def _fd_grad(f, x, h=1e-6):
    """Central finite differences of scalar f over every entry of x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def _close(a, b, tol=1e-4):
    return np.all(np.abs(a - b) <= tol * (1.0 + np.abs(b)))


def test_leaky_relu_values():
    t = ad.Tape()
    x = t.watch(np.array([-2.0, 0.0, 3.0]))
    y = ad.leaky_relu(x, 0.01)
    assert np.allclose(y.data, [-0.02, 0.0, 3.0])


def test_leaky_relu_backward_at_zero_uses_positive_branch():
    t = ad.Tape()
    x = t.watch(np.array(0.0))
    y = ad.tsum(ad.leaky_relu(x, 0.01))
    g = ad.backward(t, y)
    assert g[x.node] == pytest.approx(1.0)


def test_matmul_shapes():
    t = ad.Tape()
    a = t.watch(np.ones((2, 3)))
    b = t.watch(np.ones((3, 4)))
    assert ad.matmul(a, b).data.shape == (2, 4)
    with pytest.raises(ShapeMismatch) as exc:
        ad.matmul(a, t.watch(np.ones((2, 3))))
    assert "(2, 3)" in str(exc.value)


def test_conv2d_hand_computed():
    # one 2x2 kernel, stride 2 on a 4x4 input: four disjoint windows
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    w = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), stride=2).data
    expect = np.array(
        [
            [0 * 1 + 1 * 2 + 4 * 3 + 5 * 4, 2 * 1 + 3 * 2 + 6 * 3 + 7 * 4],
            [8 * 1 + 9 * 2 + 12 * 3 + 13 * 4, 10 * 1 + 11 * 2 + 14 * 3 + 15 * 4],
        ],
        dtype=float,
    )
    assert out.shape == (1, 1, 2, 2)
    assert np.array_equal(out[0, 0], expect)


def test_conv2d_shape_errors():
    with pytest.raises(ShapeMismatch):
        ad.conv2d(ad.Tensor(np.ones((1, 2, 4, 4))), ad.Tensor(np.ones((3, 1, 2, 2))), 1)
    with pytest.raises(ShapeMismatch):
        ad.conv2d(ad.Tensor(np.ones((1, 1, 4, 4))), ad.Tensor(np.ones((3, 1, 2, 3))), 1)


def test_backward_square():
    t = ad.Tape()
    x = t.watch(np.array(3.0))
    g = ad.backward(t, ad.square(x))
    assert g[x.node] == pytest.approx(6.0)


def test_backward_sum_matmul():
    # f = sum(W @ x): df/dW[i,j] = x[j]
    t = ad.Tape()
    w = t.watch(np.ones((3, 4)))
    x = np.arange(4.0).reshape(4, 1)
    f = ad.tsum(ad.matmul(w, ad.Tensor(x)))
    g = ad.backward(t, f)[w.node]
    assert np.array_equal(g, np.tile(x.ravel(), (3, 1)))


def test_backward_requires_scalar():
    t = ad.Tape()
    x = t.watch(np.ones(3))
    with pytest.raises(NonScalarOutput):
        ad.backward(t, ad.square(x))


def test_backward_unreached_leaf_gets_zeros():
    t = ad.Tape()
    x = t.watch(np.array(2.0))
    y = t.watch(np.ones((2, 2)))
    g = ad.backward(t, ad.square(x))
    assert np.array_equal(g[y.node], np.zeros((2, 2)))


def test_backward_constant_output_all_zero():
    t = ad.Tape()
    x = t.watch(np.array(2.0))
    const = ad.square(ad.Tensor(np.array(5.0)))  # never touches the tape
    assert const.node is None
    g = ad.backward(t, const)
    assert np.array_equal(g[x.node], np.zeros(()))


def test_backward_linearity():
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((3, 3))

    def build(which):
        t = ad.Tape()
        x = t.watch(x0.copy())
        f = ad.tsum(ad.square(x))
        g = ad.tmean(ad.exp(ad.scale(x, 0.3)))
        out = {"f": f, "g": g, "sum": ad.add(f, g)}[which]
        return ad.backward(t, out)[x.node]

    assert np.allclose(build("f") + build("g"), build("sum"), atol=1e-12)


def test_forward_backward_bit_identical_rerun():
    rng = np.random.default_rng(5)
    x0 = rng.standard_normal((4, 4))

    def run():
        t = ad.Tape()
        x = t.watch(x0.copy())
        y = ad.tsum(ad.mul(ad.sqrt(ad.square(x)), ad.leaky_relu(x)))
        return y.data.copy(), ad.backward(t, y)[x.node]

    v1, g1 = run()
    v2, g2 = run()
    assert np.array_equal(v1, v2) and np.array_equal(g1, g2)


def test_solve_spd_node_identity_backward():
    t = ad.Tape()
    b = t.watch(np.ones((3, 2)))
    out = ad.tsum(ad.solve_spd_node(ad.Tensor(np.eye(3)), b))
    g = ad.backward(t, out)[b.node]
    assert np.allclose(g, np.ones((3, 2)))


def test_solve_spd_node_scalar_gradient():
    t = ad.Tape()
    a = t.watch(np.array([[2.0]]))
    out = ad.solve_spd_node(a, ad.Tensor(np.array([[6.0]])))
    assert out.data[0, 0] == pytest.approx(3.0)
    g = ad.backward(t, ad.tsum(out))[a.node]
    assert g[0, 0] == pytest.approx(-1.5)  # d(b/a)/da = -b/a^2


def test_solve_spd_node_fd_gradient():
    rng = np.random.default_rng(42)
    m = rng.standard_normal((4, 4))
    a0 = m.T @ m + 2.0 * np.eye(4)
    b0 = rng.standard_normal((4, 2))

    def value(a, b):
        return float(ad.tsum(ad.square(ad.solve_spd_node(ad.Tensor(a), ad.Tensor(b)))).data)

    t = ad.Tape()
    a = t.watch(a0)
    b = t.watch(b0)
    loss = ad.tsum(ad.square(ad.solve_spd_node(a, b)))
    grads = ad.backward(t, loss)
    # A is constrained symmetric: check directional derivatives along
    # random symmetric directions instead of entrywise perturbations
    h = 1e-6
    for _ in range(5):
        s = rng.standard_normal((4, 4))
        s = 0.5 * (s + s.T)
        fd = (value(a0 + h * s, b0) - value(a0 - h * s, b0)) / (2 * h)
        assert abs(float(np.sum(grads[a.node] * s)) - fd) <= 1e-5 * (1.0 + abs(fd))
    assert _close(grads[b.node], _fd_grad(lambda: value(a0, b0), b0), 1e-5)


def test_solve_spd_node_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        ad.solve_spd_node(ad.Tensor(np.array([[1.0, 2.0], [2.0, 1.0]])), ad.Tensor(np.ones((2, 1))))


def test_gather_concat_reshape_backward():
    rng = np.random.default_rng(9)
    x0 = rng.standard_normal((5, 3))

    def value():
        t = ad.Tape()
        x = t.watch(x0)
        picked = ad.gather_rows(x, np.array([0, 2, 2, 4]))
        joined = ad.concat([picked, ad.scale(picked, 0.5)], axis=1)
        return float(ad.tsum(ad.square(ad.reshape(joined, (2, 12)))).data)

    t = ad.Tape()
    x = t.watch(x0)
    picked = ad.gather_rows(x, np.array([0, 2, 2, 4]))
    joined = ad.concat([picked, ad.scale(picked, 0.5)], axis=1)
    loss = ad.tsum(ad.square(ad.reshape(joined, (2, 12))))
    g = ad.backward(t, loss)[x.node]
    assert _close(g, _fd_grad(value, x0), 1e-5)


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.ones(3)}
    state = ad.adam_init(params)
    ad.adam_step(params, {"w": np.zeros(3)}, state, lr=0.1)
    assert np.array_equal(params["w"], np.ones(3))
    assert state.t == 1


def test_adam_first_step_magnitude():
    params = {"w": np.array([1.0])}
    state = ad.adam_init(params)
    ad.adam_step(params, {"w": np.array([1.0])}, state, lr=0.1)
    # bias-corrected first step is lr * g/|g| up to epsilon
    assert params["w"][0] == pytest.approx(1.0 - 0.1, abs=1e-6)


def test_adam_monotone_against_gradient():
    params = {"w": np.array([0.5])}
    state = ad.adam_init(params)
    prev = params["w"][0]
    for _ in range(2):
        ad.adam_step(params, {"w": np.array([2.0])}, state, lr=0.05)
        assert params["w"][0] < prev
        prev = params["w"][0]


def test_adam_shape_mismatch():
    params = {"w": np.ones(3)}
    state = ad.adam_init(params)
    with pytest.raises(ShapeMismatch):
        ad.adam_step(params, {"w": np.ones(4)}, state, lr=0.1)


def test_debug_nan_assertion():
    ad.set_debug_nan(True)
    try:
        t = ad.Tape()
        x = t.watch(np.array(-1.0))
        with pytest.raises(FloatingPointError):
            ad.sqrt(x)
    finally:
        ad.set_debug_nan(False)
