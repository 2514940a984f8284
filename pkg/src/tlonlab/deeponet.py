"""DeepONet surrogate: branch net (CNN or FNN) + trunk net (FNN) combined
by a dot product over p basis outputs, trained under a relative-L2 loss.

The forward pass is assembled from autodiff primitives so the same code
serves plain inference (constant tensors) and training (watched params).
The branch output of the first fully-connected layer is exposed as the
conditioning feature for the distribution-matching loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .errors import ArchMismatch, EmptyDataset, InvalidArch, NanLoss, ShapeMismatch, ZeroReference
from .randfield import RngStream
from .tlonio import read_sidecar, read_tensors, write_sidecar, write_tensors

LEAKY_SLOPE = 0.01

DATASET_ROLES = (
    "source-train",
    "source-test",
    "target-labeled",
    "target-unlabeled",
    "target-test",
    "ood",
)


@dataclass
class OperatorDataset:
    """Sensor-sampled input functions, shared evaluation coordinates and
    reference outputs (absent for the unlabeled target pool)."""

    branch_inputs: np.ndarray  # (n, *sensor_shape)
    coords: np.ndarray         # (d, coord_dim)
    outputs: np.ndarray | None  # (n, d) or None for target-unlabeled
    role: str

    def __post_init__(self):
        if self.role not in DATASET_ROLES:
            raise InvalidArch(f"unknown dataset role {self.role!r}; options: {DATASET_ROLES}")
        self.branch_inputs = np.ascontiguousarray(self.branch_inputs, dtype=np.float64)
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if self.branch_inputs.shape[0] < 1:
            raise EmptyDataset(f"dataset with role {self.role} has no samples")
        if self.outputs is not None:
            self.outputs = np.ascontiguousarray(self.outputs, dtype=np.float64)
            if self.outputs.shape != (self.branch_inputs.shape[0], self.coords.shape[0]):
                raise ShapeMismatch(
                    f"outputs {self.outputs.shape} inconsistent with "
                    f"{self.branch_inputs.shape[0]} samples x {self.coords.shape[0]} coords"
                )
            if not np.all(np.isfinite(self.outputs)):
                raise InvalidArch(f"dataset {self.role}: outputs contain non-finite values")

    @property
    def n(self) -> int:
        return self.branch_inputs.shape[0]

    def subset(self, idx) -> "OperatorDataset":
        out = None if self.outputs is None else self.outputs[idx]
        return OperatorDataset(self.branch_inputs[idx], self.coords, out, self.role)


@dataclass(frozen=True)
class ArchConfig:
    """Network shapes; branch_fc and trunk_fc end in the basis count p."""

    branch_kind: str  # "cnn" | "fnn"
    sensor_shape: tuple[int, ...]
    coord_dim: int
    branch_conv: tuple[tuple[int, int, int], ...]  # (channels, kernel, stride) per layer
    branch_fc: tuple[int, ...]
    trunk_fc: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sensor_shape", tuple(int(v) for v in self.sensor_shape))
        object.__setattr__(self, "branch_conv", tuple(tuple(int(v) for v in c) for c in self.branch_conv))
        object.__setattr__(self, "branch_fc", tuple(int(v) for v in self.branch_fc))
        object.__setattr__(self, "trunk_fc", tuple(int(v) for v in self.trunk_fc))
        if self.branch_kind not in ("cnn", "fnn"):
            raise InvalidArch(f"branch_kind must be cnn or fnn, got {self.branch_kind!r}")
        if not self.branch_fc or not self.trunk_fc:
            raise InvalidArch("branch_fc and trunk_fc must be non-empty")
        if self.branch_fc[-1] != self.trunk_fc[-1] or self.p < 1:
            raise InvalidArch(
                f"branch and trunk must end in the same basis count p >= 1, "
                f"got {self.branch_fc} and {self.trunk_fc}"
            )
        if self.branch_kind == "cnn":
            if len(self.sensor_shape) != 2:
                raise InvalidArch(f"cnn branch needs a 2-D sensor grid, got {self.sensor_shape}")
            if not self.branch_conv:
                raise InvalidArch("cnn branch needs at least one conv layer")
            self.conv_output_shape()  # validates fit
        else:
            if self.branch_conv:
                raise InvalidArch("fnn branch must not define conv layers")
        if min(self.sensor_shape) < 1 or self.coord_dim < 1:
            raise InvalidArch(f"bad sensor shape {self.sensor_shape} or coord dim {self.coord_dim}")

    @property
    def p(self) -> int:
        return self.branch_fc[-1]

    def conv_output_shape(self) -> tuple[int, int, int]:
        c, h, w = 1, self.sensor_shape[0], self.sensor_shape[1]
        for channels, kernel, stride in self.branch_conv:
            if kernel > h or kernel > w or stride < 1:
                raise InvalidArch(f"conv layer {channels, kernel, stride} does not fit {h}x{w}")
            h = (h - kernel) // stride + 1
            w = (w - kernel) // stride + 1
            c = channels
        return c, h, w

    def branch_flat_dim(self) -> int:
        if self.branch_kind == "cnn":
            c, h, w = self.conv_output_shape()
            return c * h * w
        return int(np.prod(self.sensor_shape))

    def to_json(self) -> dict:
        return {
            "branch_kind": self.branch_kind,
            "sensor_shape": list(self.sensor_shape),
            "coord_dim": self.coord_dim,
            "branch_conv": [list(c) for c in self.branch_conv],
            "branch_fc": list(self.branch_fc),
            "trunk_fc": list(self.trunk_fc),
        }

    @staticmethod
    def from_json(d: dict) -> "ArchConfig":
        return ArchConfig(
            branch_kind=d["branch_kind"],
            sensor_shape=tuple(d["sensor_shape"]),
            coord_dim=int(d["coord_dim"]),
            branch_conv=tuple(tuple(c) for c in d["branch_conv"]),
            branch_fc=tuple(d["branch_fc"]),
            trunk_fc=tuple(d["trunk_fc"]),
        )


def param_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in deterministic order."""
    shapes: dict[str, tuple[int, ...]] = {}
    if arch.branch_kind == "cnn":
        c_in = 1
        for i, (c_out, k, _s) in enumerate(arch.branch_conv):
            shapes[f"branch.conv{i}.w"] = (c_out, c_in, k, k)
            shapes[f"branch.conv{i}.b"] = (c_out,)
            c_in = c_out
    w_in = arch.branch_flat_dim()
    for i, w_out in enumerate(arch.branch_fc):
        shapes[f"branch.fc{i}.w"] = (w_in, w_out)
        shapes[f"branch.fc{i}.b"] = (w_out,)
        w_in = w_out
    w_in = arch.coord_dim
    for i, w_out in enumerate(arch.trunk_fc):
        shapes[f"trunk.fc{i}.w"] = (w_in, w_out)
        shapes[f"trunk.fc{i}.b"] = (w_out,)
        w_in = w_out
    return shapes


def glorot_bound(shape: tuple[int, ...]) -> float:
    if len(shape) == 2:
        fan_in, fan_out = shape
    else:  # conv (c_out, c_in, k, k)
        fan_in = shape[1] * shape[2] * shape[3]
        fan_out = shape[0] * shape[2] * shape[3]
    return math.sqrt(6.0 / (fan_in + fan_out))


@dataclass
class DeepONetModel:
    arch: ArchConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "DeepONetModel":
        return DeepONetModel(self.arch, {k: v.copy() for k, v in self.params.items()})

    def forward(self, branch_inputs, coords) -> "ForwardResult":
        """Plain inference on numpy arrays (no tape)."""
        P = {k: ad.Tensor(v) for k, v in self.params.items()}
        return forward_graph(self.arch, P, ad.Tensor(branch_inputs), ad.Tensor(coords))


def init_model(arch: ArchConfig, rng: RngStream) -> DeepONetModel:
    """Glorot-uniform weights, zero biases; deterministic given the stream."""
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(arch).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            a = glorot_bound(shape)
            u = rng.uniform(int(np.prod(shape)))
            params[name] = (a * (2.0 * u - 1.0)).reshape(shape)
    return DeepONetModel(arch, params)


class ForwardResult(NamedTuple):
    pred: "ad.Tensor"
    xb1: "ad.Tensor | None"   # first branch-FC output (conditioning feature)
    branch_out: "ad.Tensor"
    trunk_out: "ad.Tensor"


def _affine(P, name, x):
    return ad.add(ad.matmul(x, P[f"{name}.w"]), P[f"{name}.b"])


def branch_stage_count(arch: ArchConfig) -> int:
    """Stage 0 is the conv stem (or flatten for fnn); stages 1.. are FC layers."""
    return 1 + len(arch.branch_fc)


def trunk_stage_count(arch: ArchConfig) -> int:
    return len(arch.trunk_fc)


def run_branch(arch: ArchConfig, P, x, start_stage: int = 0):
    """Apply branch stages from ``start_stage``; x holds that stage's input.

    Returns (branch_out, xb1); xb1 is None when the first FC output is not
    recomputed (start_stage > 1).
    """
    if start_stage <= 0:
        if arch.branch_kind == "cnn":
            n = x.data.shape[0]
            ny, nx = arch.sensor_shape
            h = ad.reshape(x, (n, 1, ny, nx))
            for i, (c_out, _k, stride) in enumerate(arch.branch_conv):
                h = ad.conv2d(h, P[f"branch.conv{i}.w"], stride)
                h = ad.add(h, ad.reshape(P[f"branch.conv{i}.b"], (1, c_out, 1, 1)))
                h = ad.leaky_relu(h, LEAKY_SLOPE)
            h = ad.flatten(h)
        else:
            h = ad.flatten(x) if x.data.ndim > 2 else x
    else:
        h = x
    xb1 = None
    n_fc = len(arch.branch_fc)
    for i in range(max(start_stage - 1, 0), n_fc):
        h = _affine(P, f"branch.fc{i}", h)
        if i < n_fc - 1:
            h = ad.leaky_relu(h, LEAKY_SLOPE)
        if i == 0:
            xb1 = h
    return h, xb1


def run_trunk(arch: ArchConfig, P, z, start_stage: int = 0):
    h = z
    n_fc = len(arch.trunk_fc)
    for i in range(start_stage, n_fc):
        h = _affine(P, f"trunk.fc{i}", h)
        if i < n_fc - 1:
            h = ad.leaky_relu(h, LEAKY_SLOPE)
    return h


def forward_graph(arch: ArchConfig, P, branch_inputs, coords,
                  branch_start: int = 0, trunk_start: int = 0) -> ForwardResult:
    """prediction[j] = sum_i branch_out[i] * trunk_out[j][i].

    branch_inputs: (n, *sensor_shape) or pre-computed stage features.
    coords: (d, coord_dim) or pre-computed trunk features.
    """
    if coords.data.ndim != 2:
        raise ShapeMismatch(f"coords must be (d, coord_dim), got {coords.data.shape}")
    if trunk_start == 0 and coords.data.shape[1] != arch.coord_dim:
        raise ShapeMismatch(
            f"coords dim {coords.data.shape[1]} != trunk input dim {arch.coord_dim}"
        )
    if branch_start == 0 and tuple(branch_inputs.data.shape[1:]) != arch.sensor_shape:
        raise ShapeMismatch(
            f"branch input {branch_inputs.data.shape} does not match sensors {arch.sensor_shape}"
        )
    branch_out, xb1 = run_branch(arch, P, branch_inputs, branch_start)
    trunk_out = run_trunk(arch, P, coords, trunk_start)
    pred = ad.matmul(branch_out, ad.transpose(trunk_out))
    return ForwardResult(pred=pred, xb1=xb1, branch_out=branch_out, trunk_out=trunk_out)


# ------------------------------------------------------------------ losses

def relative_l2(pred: np.ndarray, ref: np.ndarray) -> float:
    """||pred - ref||_2 / ||ref||_2 over the flattened arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ShapeMismatch(f"relative_l2: shapes differ, {pred.shape} vs {ref.shape}")
    denom = float(np.linalg.norm(ref))
    if denom == 0.0:
        raise ZeroReference("relative_l2: reference norm is zero")
    return float(np.linalg.norm(pred - ref) / denom)


def relative_l2_node(pred: "ad.Tensor", ref: np.ndarray) -> "ad.Tensor":
    """Tape version with a constant reference."""
    ref = np.asarray(ref, dtype=np.float64)
    if pred.data.shape != ref.shape:
        raise ShapeMismatch(f"relative_l2: shapes differ, {pred.data.shape} vs {ref.shape}")
    denom = float(np.linalg.norm(ref))
    if denom == 0.0:
        raise ZeroReference("relative_l2: reference norm is zero")
    diff = ad.sub(pred, ref)
    return ad.scale(ad.sqrt(ad.tsum(ad.square(diff))), 1.0 / denom)


# ---------------------------------------------------------------- training

def train_source(
    model: DeepONetModel,
    dataset,
    epochs: int,
    batch: int,
    lr: float,
    rng: RngStream,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    coord_batch: int | None = None,
    clip: float | None = None,
) -> list[float]:
    """Adam minimization of the batch relative-L2 loss; mutates the model.

    Deterministic given the stream (shuffle order and coordinate
    subsampling both come from rng).  Returns the per-epoch mean loss.
    """
    inputs = np.asarray(dataset.branch_inputs, dtype=np.float64)
    refs = np.asarray(dataset.outputs, dtype=np.float64)
    coords = np.asarray(dataset.coords, dtype=np.float64)
    n = inputs.shape[0]
    d = coords.shape[0]
    state = ad.adam_init(model.params)
    history: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, batch):
            sel = order[lo : lo + batch]
            coord_sel = None
            step_coords = coords
            step_refs = refs[sel]
            if coord_batch is not None and coord_batch < d:
                coord_sel = rng.choice(d, coord_batch)
                step_coords = coords[coord_sel]
                step_refs = step_refs[:, coord_sel]
            tape = ad.Tape()
            P = {k: tape.watch(v) for k, v in model.params.items()}
            out = forward_graph(model.arch, P, ad.Tensor(inputs[sel]), ad.Tensor(step_coords))
            loss = relative_l2_node(out.pred, step_refs)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NanLoss(f"train_source: non-finite loss at epoch {epoch}")
            if lr != 0.0:
                grads_by_node = ad.backward(tape, loss)
                grads = {k: grads_by_node[t.node] for k, t in P.items()}
                ad.adam_step(model.params, grads, state, lr, beta1, beta2, eps, clip=clip)
            losses.append(value)
        history.append(float(np.mean(losses)))
    return history


# -------------------------------------------------------------- checkpoints

def save_checkpoint(model: DeepONetModel, path) -> None:
    """TLON container with sorted parameter tensors + arch sidecar."""
    write_tensors(path, {k: model.params[k] for k in sorted(model.params)})
    write_sidecar(path, {"arch": model.arch.to_json(), "kind": "deeponet-checkpoint"})


def load_checkpoint(path, arch: ArchConfig | None = None) -> DeepONetModel:
    meta = read_sidecar(path)
    file_arch = ArchConfig.from_json(meta["arch"])
    if arch is not None and arch != file_arch:
        raise ArchMismatch(f"checkpoint arch {file_arch} != requested {arch}")
    tensors = read_tensors(path)
    expected = param_shapes(file_arch)
    if set(tensors) != set(expected):
        raise ArchMismatch(
            f"checkpoint tensors {sorted(tensors)} do not match arch parameters {sorted(expected)}"
        )
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise ArchMismatch(f"checkpoint tensor {name} has shape {tensors[name].shape}, want {shape}")
    return DeepONetModel(file_arch, {k: np.ascontiguousarray(v) for k, v in tensors.items()})


def evaluate_mean_rel_l2(model: DeepONetModel, dataset) -> float:
    """Per-sample relative L2 averaged over a labeled dataset."""
    if dataset.outputs is None or len(dataset.branch_inputs) == 0:
        raise EmptyDataset("evaluate: dataset has no labeled samples")
    out = model.forward(np.asarray(dataset.branch_inputs), np.asarray(dataset.coords))
    preds = out.pred.data
    refs = np.asarray(dataset.outputs)
    return float(np.mean([relative_l2(preds[i], refs[i]) for i in range(refs.shape[0])]))
