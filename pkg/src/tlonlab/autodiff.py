"""Reverse-mode automatic differentiation over dense float64 tensors.

A :class:`Tape` records one forward pass; :func:`backward` replays it in
reverse insertion order, accumulating gradients additively.  Tensors not
registered on a tape are constants: subgraphs built purely from constants
are evaluated eagerly and never appear on the tape, so backward never
visits them.  Tapes are single-use; parameters live outside the tape and
are re-registered (watched) on every pass.

Ops accept Tensor, ndarray or float arguments; non-Tensor arguments are
treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonScalarOutput, NotPositiveDefinite, ShapeMismatch
from .kernels.conv import (
    conv2d_forward_kernel,
    conv2d_grad_input_kernel,
    conv2d_grad_weight_kernel,
)
from .linalg import cholesky, solve_spd

_DEBUG_NAN = False


def set_debug_nan(enabled: bool) -> None:
    """Enable per-op finiteness assertions (debug aid, off by default)."""
    global _DEBUG_NAN
    _DEBUG_NAN = bool(enabled)


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape=None, node=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        """A constant copy of this tensor's value."""
        return Tensor(self.data.copy())

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = "const" if self.node is None else f"node {self.node}"
        return f"Tensor(shape={self.data.shape}, {tag})"


class _Node:
    __slots__ = ("parents", "backward", "shape")

    def __init__(self, parents, backward, shape):
        self.parents = parents
        self.backward = backward
        self.shape = shape


class Tape:
    """Append-only operation record for one forward/backward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: list[int] = []

    def watch(self, data) -> Tensor:
        """Register a leaf whose gradient backward() will report."""
        t = Tensor(data, tape=self, node=len(self.nodes))
        self.nodes.append(_Node((), None, t.data.shape))
        self.leaves.append(t.node)
        return t

    def _record(self, value, parents, backward_fn) -> Tensor:
        t = Tensor(value, tape=self, node=len(self.nodes))
        self.nodes.append(_Node(parents, backward_fn, t.data.shape))
        return t


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) and data.node is None else Tensor(
        data.data if isinstance(data, Tensor) else data
    )


def _coerce(args):
    """Split op arguments into (tensors, tape).  Raises on mixed tapes."""
    tape = None
    out = []
    for a in args:
        if not isinstance(a, Tensor):
            a = Tensor(a)
        if a.tape is not None:
            if tape is None:
                tape = a.tape
            elif tape is not a.tape:
                raise ValueError("operands come from different tapes")
        out.append(a)
    return out, tape


def _make(tape, value, parent_tensors, backward_fn):
    """Record an op result, or return a constant if nothing is on a tape."""
    value = np.asarray(value, dtype=np.float64)
    if _DEBUG_NAN and not np.all(np.isfinite(value)):
        raise FloatingPointError("non-finite value produced on the tape")
    if tape is None:
        return Tensor(value)
    parents = tuple(t.node for t in parent_tensors if t.node is not None)
    flags = tuple(t.node is not None for t in parent_tensors)

    def backward(g, _fn=backward_fn, _flags=flags):
        grads = _fn(g)
        return tuple(gr for gr, keep in zip(grads, _flags) if keep)

    return tape._record(value, parents, backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return np.ascontiguousarray(g)


# ------------------------------------------------------------- primitives

def add(a, b):
    (a, b), tape = _coerce((a, b))
    val = a.data + b.data
    return _make(tape, val, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b):
    (a, b), tape = _coerce((a, b))
    val = a.data - b.data
    return _make(tape, val, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    (a, b), tape = _coerce((a, b))
    val = a.data * b.data
    return _make(
        tape,
        val,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def scale(a, c: float):
    (a,), tape = _coerce((a,))
    c = float(c)
    return _make(tape, a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    (a, b), tape = _coerce((a, b))
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    val = a.data @ b.data
    return _make(tape, val, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a):
    (a,), tape = _coerce((a,))
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose: expected rank 2, got shape {a.data.shape}")
    return _make(tape, a.data.T.copy(), (a,), lambda g: (np.ascontiguousarray(g.T),))


def reshape(a, shape):
    (a,), tape = _coerce((a,))
    old = a.data.shape
    val = a.data.reshape(shape)
    return _make(tape, val, (a,), lambda g: (g.reshape(old),))


def flatten(a):
    """Collapse all but the leading (batch) axis."""
    (a,), tape = _coerce((a,))
    if a.data.ndim < 2:
        raise ShapeMismatch(f"flatten: expected rank >= 2, got shape {a.data.shape}")
    old = a.data.shape
    val = a.data.reshape(old[0], -1)
    return _make(tape, val, (a,), lambda g: (g.reshape(old),))


def tsum(a, axis=None, keepdims=False):
    (a,), tape = _coerce((a,))
    val = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(tape, val, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    (a,), tape = _coerce((a,))
    val = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    count = a.data.size if axis is None else shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, shape).copy(),)

    return _make(tape, val, (a,), bwd)


def sqrt(a):
    (a,), tape = _coerce((a,))
    val = np.sqrt(a.data)
    return _make(tape, val, (a,), lambda g: (g * (0.5 / val),))


def exp(a):
    (a,), tape = _coerce((a,))
    val = np.exp(a.data)
    return _make(tape, val, (a,), lambda g: (g * val,))


def square(a):
    (a,), tape = _coerce((a,))
    return _make(tape, a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),))


def trace(a):
    (a,), tape = _coerce((a,))
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise ShapeMismatch(f"trace: expected a square matrix, got shape {a.data.shape}")
    n = a.data.shape[0]

    def bwd(g):
        out = np.zeros((n, n))
        np.fill_diagonal(out, float(g))
        return (out,)

    return _make(tape, np.trace(a.data), (a,), bwd)


def leaky_relu(a, slope: float = 0.01):
    """max(x, slope*x); the subgradient at exactly 0 uses the positive branch."""
    (a,), tape = _coerce((a,))
    pos = a.data >= 0.0
    val = np.where(pos, a.data, slope * a.data)
    return _make(tape, val, (a,), lambda g: (g * np.where(pos, 1.0, slope),))


def concat(tensors, axis: int = 0):
    ts, tape = _coerce(tuple(tensors))
    val = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(tape, val, ts, bwd)


def gather_rows(a, idx):
    (a,), tape = _coerce((a,))
    idx = np.asarray(idx, dtype=np.int64)
    val = a.data[idx]
    shape = a.data.shape

    def bwd(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(tape, val, (a,), bwd)


def conv2d(x, w, stride: int = 1):
    """Valid-padding convolution; x is (N, C, H, W), w is (O, C, k, k)."""
    (x, w), tape = _coerce((x, w))
    xs, ws = x.data.shape, w.data.shape
    if len(xs) != 4 or len(ws) != 4:
        raise ShapeMismatch(f"conv2d: expected 4-D input and kernels, got {xs} and {ws}")
    if ws[2] != ws[3]:
        raise ShapeMismatch(f"conv2d: kernels must be square, got {ws}")
    if xs[1] != ws[1]:
        raise ShapeMismatch(f"conv2d: channel mismatch between input {xs} and kernels {ws}")
    if stride < 1 or xs[2] < ws[2] or xs[3] < ws[3]:
        raise ShapeMismatch(f"conv2d: kernel {ws} does not fit input {xs} at stride {stride}")
    xv = np.ascontiguousarray(x.data)
    wv = np.ascontiguousarray(w.data)
    val = conv2d_forward_kernel(xv, wv, stride)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx = conv2d_grad_input_kernel(g, wv, stride, xs[2], xs[3])
        gw = conv2d_grad_weight_kernel(g, xv, stride, ws[2], ws[3])
        return (gx, gw)

    return _make(tape, val, (x, w), bwd)


def solve_spd_node(a, b):
    """Differentiable X = A^{-1} B for symmetric positive definite A.

    Backward: dB = A^{-1} G; dA = -sym((A^{-1} G) X^T), where the
    symmetrization is valid because A is constructed symmetric.
    """
    (a, b), tape = _coerce((a, b))
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise ShapeMismatch(f"solve_spd_node: matrix must be square, got {a.data.shape}")
    if b.data.ndim != 2 or b.data.shape[0] != a.data.shape[0]:
        raise ShapeMismatch(
            f"solve_spd_node: rhs shape {b.data.shape} does not match matrix {a.data.shape}"
        )
    factor = cholesky(a.data)  # raises NotPositiveDefinite
    val = solve_spd(factor, b.data)

    def bwd(g):
        gb = solve_spd(factor, g)
        ga = -gb @ val.T
        return (0.5 * (ga + ga.T), gb)

    return _make(tape, val, (a, b), bwd)


# --------------------------------------------------------------- backward

def backward(tape: Tape, output: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar output w.r.t. every watched leaf.

    Leaves the output does not depend on get zero gradients.  A constant
    scalar output yields zeros everywhere.
    """
    if output.data.size != 1:
        raise NonScalarOutput(f"backward: output must be scalar, got shape {output.data.shape}")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    if output.node is not None:
        grads[output.node] = np.ones_like(output.data)
        for nid in range(output.node, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = tape.nodes[nid]
            if node.backward is None:
                continue
            for pid, pg in zip(node.parents, node.backward(g)):
                if pg is None:
                    continue
                # stored gradients are never mutated, so aliasing g is fine
                grads[pid] = pg if grads[pid] is None else grads[pid] + pg
    return {
        leaf: (grads[leaf] if grads[leaf] is not None else np.zeros(tape.nodes[leaf].shape))
        for leaf in tape.leaves
    }


# ------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_init(params: dict) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        t=0,
    )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    clip: float | None = None,
):
    """One Adam update with bias correction; mutates params/state in place.

    Parameters without an entry in ``grads`` are left untouched (their
    moments do not advance either), which is how frozen layers skip updates.
    """
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for k, g in grads.items():
        p = params[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeMismatch(f"adam_step: shape mismatch for {k!r}: param {p.shape}, grad {g.shape}")
        if clip is not None:
            norm = float(np.linalg.norm(g))
            if norm > clip:
                g = g * (clip / norm)
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state
