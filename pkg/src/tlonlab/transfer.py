"""Transfer-learning engine: parameter transfer, layer freezing, the hybrid
regression + distribution-matching loss with a self-adaptive weight, the
fine-tuning loop, evaluation and Monte Carlo moment estimation.

The adaptive weight on the discrepancy term starts at 10, is driven by
gradient ascent (its gradient is the discrepancy itself, which is
non-negative) and is clipped to a ceiling, so its trajectory is monotone
non-decreasing and bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .deeponet import (
    ArchConfig,
    DeepONetModel,
    OperatorDataset,
    evaluate_mean_rel_l2,
    relative_l2_node,
    run_branch,
    run_trunk,
    trunk_stage_count,
)
from .errors import ArchMismatch, EmptyDataset, NanLoss, UnknownPolicy
from .randfield import RngStream
from .rkhs import DEFAULT_CEOD_LAMBDA, ConditionalDataset, GaussianKernel, ceod_node, median_bandwidth

FREEZE_POLICIES = ("paper-default", "last-layer-only", "all")


@dataclass(frozen=True)
class FreezeMask:
    """Per-parameter trainability; at least one parameter must be trainable."""

    trainable: dict[str, bool]

    def trainable_names(self) -> list[str]:
        return [k for k, v in self.trainable.items() if v]

    def frozen_names(self) -> list[str]:
        return [k for k, v in self.trainable.items() if not v]

    def count_trainable(self, params: dict[str, np.ndarray]) -> int:
        return sum(params[k].size for k in self.trainable_names())


def transfer_params(source: DeepONetModel) -> DeepONetModel:
    """Deep copy of the source model; the copy owns fresh arrays."""
    return source.copy()


def build_freeze_mask(model: DeepONetModel, policy: str) -> FreezeMask:
    """paper-default trains the branch FC stack plus the last trunk layer;
    last-layer-only trains only the final layer of each net; all trains
    everything (the from-scratch comparison)."""
    if policy not in FREEZE_POLICIES:
        raise UnknownPolicy(f"unknown freeze policy {policy!r}; options: {FREEZE_POLICIES}")
    arch = model.arch
    last_branch_fc = len(arch.branch_fc) - 1
    last_trunk_fc = len(arch.trunk_fc) - 1
    trainable: dict[str, bool] = {}
    for name in model.params:
        if policy == "all":
            trainable[name] = True
        elif policy == "paper-default":
            trainable[name] = name.startswith("branch.fc") or name.startswith(
                f"trunk.fc{last_trunk_fc}."
            )
        else:  # last-layer-only
            trainable[name] = name.startswith(f"branch.fc{last_branch_fc}.") or name.startswith(
                f"trunk.fc{last_trunk_fc}."
            )
    return FreezeMask(trainable)


@dataclass
class HybridLossConfig:
    """Weights and batch sizes for the fine-tuning loss.

    lambda1 is fixed at 1 by the method; lambda2 is trainable via ascent
    between its init and ceiling.  ceod_lambda regularizes the Gram
    inverses inside the discrepancy.
    """

    lambda1: float = 1.0
    lambda2_init: float = 10.0
    lambda2_lr: float = 0.1
    lambda2_ceiling: float = 1e3
    ceod_lambda: float = DEFAULT_CEOD_LAMBDA
    unlabeled_batch: int = 64
    labeled_batch: int = 64
    ceod_enabled: bool = True
    p_features: str = "initial"  # initial | live: which model embeds the labeled side
    q_feature_grad: bool = False  # backprop into unlabeled features, not just predictions
    bandwidth_x: float | None = None  # median heuristic when None
    bandwidth_y: float | None = None
    bandwidth_refresh_epochs: int = 0  # re-resolve kernels every k epochs; 0 = resolve once


@dataclass
class HybridStep:
    """One assembled loss graph plus the handles needed to descend it."""

    tape: ad.Tape
    params: dict[str, ad.Tensor]
    total: ad.Tensor
    l_r: ad.Tensor
    l_ceod: ad.Tensor


def _cache_stages(arch: ArchConfig, mask: FreezeMask) -> tuple[int, int]:
    """Deepest frozen prefixes of branch/trunk that can be precomputed."""
    conv_trainable = any(
        mask.trainable[k] for k in mask.trainable if k.startswith("branch.conv")
    )
    branch_start = 0 if (arch.branch_kind == "cnn" and conv_trainable) else 1
    trunk_start = trunk_stage_count(arch)
    for i in range(trunk_stage_count(arch)):
        if mask.trainable.get(f"trunk.fc{i}.w") or mask.trainable.get(f"trunk.fc{i}.b"):
            trunk_start = i
            break
    return branch_start, trunk_start


def _stem_only(model: DeepONetModel, inputs: np.ndarray) -> np.ndarray:
    """Branch features after the conv stem (or flatten), computed tape-free."""
    arch = model.arch
    P = {k: ad.Tensor(v) for k, v in model.params.items()}
    x = ad.Tensor(inputs)
    if arch.branch_kind == "cnn":
        n = x.data.shape[0]
        ny, nx = arch.sensor_shape
        h = ad.reshape(x, (n, 1, ny, nx))
        for i, (c_out, _k, stride) in enumerate(arch.branch_conv):
            h = ad.conv2d(h, P[f"branch.conv{i}.w"], stride)
            h = ad.add(h, ad.reshape(P[f"branch.conv{i}.b"], (1, c_out, 1, 1)))
            h = ad.leaky_relu(h)
        return ad.flatten(h).data
    return x.data.reshape(x.data.shape[0], -1)


def _trunk_prefix(model: DeepONetModel, coords: np.ndarray, stop_stage: int) -> np.ndarray:
    P = {k: ad.Tensor(v) for k, v in model.params.items()}
    h = ad.Tensor(coords)
    for i in range(stop_stage):
        h = ad.add(ad.matmul(h, P[f"trunk.fc{i}.w"]), P[f"trunk.fc{i}.b"])
        if i < len(model.arch.trunk_fc) - 1:
            h = ad.leaky_relu(h)
    return h.data


def resolve_kernels(
    model: DeepONetModel,
    labeled: OperatorDataset,
    cfg: HybridLossConfig,
    unlabeled: OperatorDataset | None = None,
) -> tuple[GaussianKernel, GaussianKernel]:
    """Gaussian kernels with median-heuristic bandwidths, frozen for the run.

    The pools mix the labeled side with the initial unlabeled predictions:
    a bandwidth fit to labels alone collapses the cross-Gram between labels
    and far-away initial predictions to zero, which decouples the
    discrepancy's two operator estimates and leaves its gradient with no
    pull toward the labels.
    """
    bx, by = cfg.bandwidth_x, cfg.bandwidth_y
    if bx is None or by is None:
        out = model.forward(labeled.branch_inputs, labeled.coords)
        xs = [out.xb1.data]
        ys = [np.asarray(labeled.outputs)]
        if unlabeled is not None:
            out_u = model.forward(unlabeled.branch_inputs, unlabeled.coords)
            xs.append(out_u.xb1.data)
            ys.append(out_u.pred.data)
        if bx is None:
            bx = median_bandwidth(np.vstack(xs))
        if by is None:
            by = median_bandwidth(np.vstack(ys))
    return GaussianKernel(bx), GaussianKernel(by)


def hybrid_loss(
    model: DeepONetModel,
    labeled: OperatorDataset,
    unlabeled: OperatorDataset,
    cfg: HybridLossConfig,
    lambda2: float | None = None,
    mask: FreezeMask | None = None,
    kernels: tuple[GaussianKernel, GaussianKernel] | None = None,
    caches: tuple | None = None,
    p_xb1: np.ndarray | None = None,
) -> HybridStep:
    """Assemble total = lambda1 * L_r + lambda2 * L_ceod on a fresh tape.

    L_r is the relative-L2 loss on the labeled batch.  L_ceod compares the
    conditional dataset (labeled features, labels) against (unlabeled
    features, live predictions); the labeled side enters as a constant,
    the unlabeled side carries gradients.
    """
    if labeled.outputs is None:
        raise EmptyDataset("hybrid_loss: labeled dataset has no outputs")
    lam2 = cfg.lambda2_init if lambda2 is None else lambda2
    if cfg.ceod_enabled and kernels is None:
        kernels = resolve_kernels(model, labeled, cfg, unlabeled)

    tape = ad.Tape()
    params: dict[str, ad.Tensor] = {}
    for name, value in model.params.items():
        if mask is None or mask.trainable[name]:
            params[name] = tape.watch(value)
        else:
            params[name] = ad.Tensor(value)

    if caches is None:
        branch_start, trunk_start = 0, 0
        lab_in = ad.Tensor(labeled.branch_inputs)
        unl_in = ad.Tensor(unlabeled.branch_inputs) if cfg.ceod_enabled else None
        trunk_in = ad.Tensor(labeled.coords)
    else:
        branch_start, trunk_start, lab_feat, unl_feat, trunk_feat = caches
        lab_in = ad.Tensor(lab_feat)
        unl_in = ad.Tensor(unl_feat) if unl_feat is not None else None
        trunk_in = ad.Tensor(trunk_feat)

    trunk_out = run_trunk(model.arch, params, trunk_in, trunk_start)
    branch_l, xb1_l = run_branch(model.arch, params, lab_in, branch_start)
    pred_l = ad.matmul(branch_l, ad.transpose(trunk_out))
    l_r = relative_l2_node(pred_l, labeled.outputs)

    if cfg.ceod_enabled:
        branch_u, xb1_u = run_branch(model.arch, params, unl_in, branch_start)
        pred_u = ad.matmul(branch_u, ad.transpose(trunk_out))
        # the labeled side is a fixed matching target by default: embedding it
        # with the live branch lets the optimizer shrink the discrepancy by
        # collapsing the shared feature map instead of fixing predictions
        if cfg.p_features == "initial" and p_xb1 is not None:
            p_feat = p_xb1
        else:
            p_feat = xb1_l.data.copy()
        q_feat = xb1_u if cfg.q_feature_grad else ad.Tensor(xb1_u.data.copy())
        p_side = ConditionalDataset(p_feat, np.asarray(labeled.outputs))
        l_ceod = ceod_node(p_side, q_feat, pred_u, cfg.ceod_lambda, kernels[0], kernels[1])
    else:
        l_ceod = ad.Tensor(0.0)

    total = ad.add(ad.scale(l_r, cfg.lambda1), ad.scale(l_ceod, lam2))
    return HybridStep(tape=tape, params=params, total=total, l_r=l_r, l_ceod=l_ceod)


@dataclass
class FinetuneHistory:
    l_r: list[float] = field(default_factory=list)
    l_ceod: list[float] = field(default_factory=list)
    lambda2: list[float] = field(default_factory=list)


def finetune(
    target: DeepONetModel,
    labeled: OperatorDataset,
    unlabeled: OperatorDataset | None,
    mask: FreezeMask,
    cfg: HybridLossConfig,
    epochs: int,
    rng: RngStream,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[DeepONetModel, FinetuneHistory]:
    """Adam descent on trainable parameters, ascent on the adaptive weight.

    Mutates and returns ``target``.  Frozen layers below the first
    trainable one are evaluated once and cached, which is what makes
    fine-tuning cheaper per epoch than full training.
    """
    if not any(mask.trainable.values()):
        raise UnknownPolicy("finetune: mask freezes every parameter")
    if labeled.outputs is None or labeled.n < 1:
        raise EmptyDataset("finetune: labeled target data required")
    history = FinetuneHistory()
    if epochs == 0:
        return target, history
    use_ceod = cfg.ceod_enabled and unlabeled is not None
    step_cfg = HybridLossConfig(**{**cfg.__dict__, "ceod_enabled": use_ceod})

    kernels = None
    init_xb1 = None
    if use_ceod and cfg.p_features == "initial":
        init_xb1 = target.forward(labeled.branch_inputs, labeled.coords).xb1.data
    branch_start, trunk_start = _cache_stages(target.arch, mask)
    lab_feat_all = (
        _stem_only(target, labeled.branch_inputs) if branch_start == 1 else labeled.branch_inputs
    )
    unl_feat_all = None
    if use_ceod:
        unl_feat_all = (
            _stem_only(target, unlabeled.branch_inputs)
            if branch_start == 1
            else unlabeled.branch_inputs
        )
    trunk_feat = (
        _trunk_prefix(target, labeled.coords, trunk_start) if trunk_start > 0 else labeled.coords
    )

    trainable = set(mask.trainable_names())
    opt_params = {k: target.params[k] for k in sorted(trainable)}
    state = ad.adam_init(opt_params)
    lam2 = cfg.lambda2_init
    n_l = labeled.n
    refs = np.asarray(labeled.outputs)

    for epoch in range(epochs):
        refresh = cfg.bandwidth_refresh_epochs
        if use_ceod and (kernels is None or (refresh > 0 and epoch % refresh == 0)):
            kernels = resolve_kernels(target, labeled, cfg, unlabeled)
        if n_l <= cfg.labeled_batch:
            batches = [np.arange(n_l)]
        else:
            order = rng.permutation(n_l)
            batches = [order[lo : lo + cfg.labeled_batch] for lo in range(0, n_l, cfg.labeled_batch)]
        ep_lr, ep_ceod = [], []
        for sel in batches:
            lab_batch = OperatorDataset(
                labeled.branch_inputs[sel], labeled.coords, refs[sel], labeled.role
            )
            unl_batch_feat = None
            unl_batch = unlabeled
            if use_ceod:
                k = min(cfg.unlabeled_batch, unlabeled.n)
                uidx = rng.choice(unlabeled.n, k)
                unl_batch = OperatorDataset(
                    unlabeled.branch_inputs[uidx], unlabeled.coords, None, unlabeled.role
                )
                unl_batch_feat = unl_feat_all[uidx]
            caches = (branch_start, trunk_start, lab_feat_all[sel], unl_batch_feat, trunk_feat)
            step = hybrid_loss(
                target, lab_batch, unl_batch, step_cfg,
                lambda2=lam2, mask=mask, kernels=kernels, caches=caches,
                p_xb1=None if init_xb1 is None else init_xb1[sel],
            )
            lr_val = float(step.l_r.data)
            ceod_val = float(step.l_ceod.data)
            if not (math.isfinite(lr_val) and math.isfinite(ceod_val)):
                raise NanLoss(f"finetune: non-finite loss at epoch {epoch}")
            grads_by_node = ad.backward(step.tape, step.total)
            grads = {
                k: grads_by_node[t.node] for k, t in step.params.items() if k in trainable
            }
            ad.adam_step(opt_params, grads, state, lr, beta1, beta2, eps)
            if use_ceod:
                # ascent on the adaptive weight: d(total)/d(lambda2) = L_ceod >= 0
                lam2 = min(max(lam2 + cfg.lambda2_lr * ceod_val, cfg.lambda2_init), cfg.lambda2_ceiling)
            ep_lr.append(lr_val)
            ep_ceod.append(ceod_val)
        history.l_r.append(float(np.mean(ep_lr)))
        history.l_ceod.append(float(np.mean(ep_ceod)))
        history.lambda2.append(lam2)
    return target, history


# ------------------------------------------------------------- evaluation

def evaluate(model: DeepONetModel, test: OperatorDataset) -> float:
    """Mean per-sample relative L2 over a labeled test set."""
    return evaluate_mean_rel_l2(model, test)


@dataclass(frozen=True)
class EvalReport:
    task: str
    mode: str
    n_t: int
    seeds: tuple[int, ...]
    per_seed: tuple[float, ...]
    mean: float
    std: float
    seconds: float


def aggregate_seeds(
    values: list[float],
    seeds: list[int],
    task: str = "",
    mode: str = "",
    n_t: int = 0,
    seconds: float = 0.0,
) -> EvalReport:
    """Mean and sample (n-1) standard deviation across seed runs."""
    if len(values) != len(seeds) or not values:
        raise EmptyDataset("aggregate_seeds: need one value per seed")
    if len(set(seeds)) != len(seeds):
        raise ArchMismatch(f"aggregate_seeds: seeds must be distinct, got {seeds}")
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return EvalReport(
        task=task,
        mode=mode,
        n_t=n_t,
        seeds=tuple(int(s) for s in seeds),
        per_seed=tuple(float(v) for v in arr),
        mean=float(arr.mean()),
        std=std,
        seconds=float(seconds),
    )


# -------------------------------------------------------------- UQ moments

@dataclass(frozen=True)
class UqMoments:
    mean: np.ndarray
    variance: np.ndarray  # (n-1) estimator
    points: tuple[tuple[int, float, float], ...]  # (coord index, mean, variance)


def uq_moments(
    model: DeepONetModel,
    field_sampler,
    n_samples: int,
    rng: RngStream,
    point_indices: tuple[int, ...] = (),
    coords: np.ndarray | None = None,
    chunk: int = 64,
) -> UqMoments:
    """Monte Carlo mean/variance of surrogate predictions over sampled inputs.

    ``field_sampler(rng)`` draws one branch input; ``coords`` defaults to
    the points the sampler's task was built with and must be supplied here.
    """
    if n_samples < 2:
        raise EmptyDataset("uq_moments: need at least 2 samples")
    if coords is None:
        raise EmptyDataset("uq_moments: evaluation coords are required")
    preds = []
    buf = []
    for _ in range(n_samples):
        buf.append(field_sampler(rng))
        if len(buf) == chunk:
            preds.append(model.forward(np.stack(buf), coords).pred.data)
            buf = []
    if buf:
        preds.append(model.forward(np.stack(buf), coords).pred.data)
    allp = np.concatenate(preds, axis=0)
    mean = allp.mean(axis=0)
    var = allp.var(axis=0, ddof=1)
    points = tuple((int(i), float(mean[i]), float(var[i])) for i in point_indices)
    return UqMoments(mean=mean, variance=var, points=points)
