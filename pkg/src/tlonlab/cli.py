"""Command-line surface: dataset generation, training, fine-tuning sweeps,
evaluation, uncertainty propagation and report consolidation.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import load_config
from .datasets import TaskData, default_arch, generate_all, get_task, load_dataset
from .deeponet import (
    ArchConfig,
    OperatorDataset,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train_source,
)
from .errors import InvalidParams, MissingCheckpoint, TlonError
from .pde import make_geometry
from .randfield import RngStream
from .reporting import merge_reports, render_markdown, rows_to_csv, write_report
from .tlonio import write_sidecar, write_tensors
from .transfer import (
    HybridLossConfig,
    aggregate_seeds,
    build_freeze_mask,
    evaluate,
    finetune,
    transfer_params,
    uq_moments,
)

MODES = ("source", "scratch", "transfer", "transfer-no-ceod", "last-layer-only")
_MODE_STREAM = {"transfer": 1, "transfer-no-ceod": 2, "scratch": 3, "last-layer-only": 4}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def resolve_arch(task, cfg) -> ArchConfig:
    arch = default_arch(task, cfg["gen"])
    over = cfg.get("arch") or {}
    branch_fc = list(over.get("branch_fc", arch.branch_fc))
    trunk_fc = list(over.get("trunk_fc", arch.trunk_fc))
    if "p" in over:
        branch_fc[-1] = int(over["p"])
        trunk_fc[-1] = int(over["p"])
    return ArchConfig(
        branch_kind=over.get("branch_kind", arch.branch_kind),
        sensor_shape=arch.sensor_shape,
        coord_dim=arch.coord_dim,
        branch_conv=tuple(tuple(c) for c in over.get("branch_conv", arch.branch_conv)),
        branch_fc=tuple(branch_fc),
        trunk_fc=tuple(trunk_fc),
    )


def _data_dir(cfg) -> Path:
    return Path(cfg["paths"]["data_dir"]) / cfg["task"]


def _out_dir(cfg) -> Path:
    return Path(cfg["paths"]["out_dir"]) / cfg["task"]


def _seconds(cfg, start: float) -> float:
    if cfg["report"].get("timing") == "none":
        return 0.0
    return time.perf_counter() - start


# ------------------------------------------------------------------- gen

def cmd_gen(cfg) -> int:
    out = _data_dir(cfg)
    written = generate_all(cfg["task"], cfg["gen"], out)
    print(f"wrote {len(written)} dataset files to {out}")
    return 0


# ---------------------------------------------------------- train-source

def cmd_train_source(cfg) -> int:
    task = get_task(cfg["task"])
    data_dir = _data_dir(cfg)
    train_ds = load_dataset(data_dir / "source-train.tlon")
    test_ds = load_dataset(data_dir / "source-test.tlon")
    arch = resolve_arch(task, cfg)
    tr = cfg["train"]
    model = init_model(arch, RngStream(int(tr["seed"]), 100))
    history = train_source(
        model,
        train_ds,
        epochs=int(tr["epochs"]),
        batch=int(tr["batch"]),
        lr=float(tr["lr"]),
        rng=RngStream(int(tr["seed"]), 200),
        coord_batch=tr.get("coord_batch"),
    )
    out_dir = _out_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out_dir / "source.tlon")
    lines = ["epoch,loss"] + [f"{i},{v:.6f}" for i, v in enumerate(history)]
    (out_dir / "source-history.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    test_err = evaluate(model, test_ds)
    print(f"source model saved to {out_dir / 'source.tlon'}")
    print(f"source test relative L2: {test_err:.4f}")
    return 0


# --------------------------------------------------------------- finetune

def _embed_field(task, values: np.ndarray, grid_n: int, n_t: int):
    """Reshape a flat output vector into its natural plotting layout."""
    if task.family == "darcy":
        mask = make_geometry(task.target_geometry, grid_n, grid_n).mask
        panel = np.full(mask.shape, np.nan)
        panel[mask] = values
        return panel
    if task.family == "brusselator":
        return values.reshape(n_t, grid_n, grid_n)
    return values


def _dump_fields(task, cfg, model, test_ds, cell_dir: Path) -> None:
    k = min(int(cfg["finetune"].get("dump_samples", 2)), test_ds.n)
    if k <= 0:
        return
    preds = model.forward(test_ds.branch_inputs[:k], test_ds.coords).pred.data
    refs = test_ds.outputs[:k]
    grid_n = int(cfg["gen"].get("darcy_grid" if task.family == "darcy" else "brusselator_grid", 32))
    n_t = int(cfg["gen"].get("brusselator_nt", 10))
    tensors: dict[str, np.ndarray] = {"coords": test_ds.coords}
    samples = []
    for i in range(k):
        sid = f"s{i:03d}"
        err = np.abs(preds[i] - refs[i]) / np.maximum(np.abs(refs[i]), 1e-12)
        tensors[f"{sid}/input"] = test_ds.branch_inputs[i]
        tensors[f"{sid}/reference"] = _embed_field(task, refs[i], grid_n, n_t)
        tensors[f"{sid}/prediction"] = _embed_field(task, preds[i], grid_n, n_t)
        tensors[f"{sid}/error"] = _embed_field(task, err, grid_n, n_t)
        samples.append(
            {
                "id": sid,
                "tensors": {
                    "input": f"{sid}/input",
                    "reference": f"{sid}/reference",
                    "prediction": f"{sid}/prediction",
                    "error": f"{sid}/error",
                },
            }
        )
    write_tensors(cell_dir / "fields.tlon", tensors)
    manifest = {"task": task.name, "family": task.family, "samples": samples}
    (cell_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _run_cell(payload: dict) -> dict:
    """One (mode, n_t, seed) fine-tuning cell; safe to run in a subprocess."""
    cfg = payload["cfg"]
    mode = payload["mode"]
    n_t = payload["n_t"]
    seed = payload["seed"]
    task = get_task(cfg["task"])
    data_dir = _data_dir(cfg)
    labeled_all = load_dataset(data_dir / "target-labeled.tlon")
    unlabeled = load_dataset(data_dir / "target-unlabeled.tlon")
    test_ds = load_dataset(data_dir / "target-test.tlon")
    if n_t > labeled_all.n:
        raise InvalidParams(f"n_t={n_t} exceeds the {labeled_all.n} generated labeled samples")
    labeled = labeled_all.subset(np.arange(n_t))

    ft = cfg["finetune"]
    arch = resolve_arch(task, cfg)
    start = time.perf_counter()
    if mode == "scratch":
        model = init_model(arch, RngStream(seed, 500_000 + n_t))
    else:
        ckpt = _out_dir(cfg) / "source.tlon"
        if not ckpt.exists():
            raise MissingCheckpoint(f"finetune mode {mode!r} needs {ckpt}; run train-source first")
        model = transfer_params(load_checkpoint(ckpt, arch))
    policy = {"scratch": "all", "transfer": "paper-default",
              "transfer-no-ceod": "paper-default", "last-layer-only": "last-layer-only"}[mode]
    mask = build_freeze_mask(model, policy)
    loss_cfg = HybridLossConfig(
        lambda2_init=float(ft["lambda2_init"]),
        lambda2_lr=float(ft["lambda2_lr"]),
        lambda2_ceiling=float(ft["lambda2_ceiling"]),
        ceod_lambda=float(ft["ceod_lambda"]),
        unlabeled_batch=int(ft["unlabeled_batch"]),
        labeled_batch=int(ft["labeled_batch"]),
        ceod_enabled=(mode == "transfer"),
    )
    rng = RngStream(seed, 600_000 + _MODE_STREAM[mode] * 10_000 + n_t)
    model, history = finetune(
        model, labeled, unlabeled, mask, loss_cfg,
        epochs=int(ft["epochs"]), rng=rng, lr=float(ft["lr"]),
    )
    value = evaluate(model, test_ds)
    seconds = _seconds(cfg, start)

    cell_dir = _out_dir(cfg) / "cells" / f"{mode}-nt{n_t}-seed{seed}"
    cell_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, cell_dir / "model.tlon")
    hist_lines = ["epoch,l_r,l_ceod,lambda2"] + [
        f"{i},{a:.6f},{b:.6f},{c:.6f}"
        for i, (a, b, c) in enumerate(zip(history.l_r, history.l_ceod, history.lambda2))
    ]
    (cell_dir / "history.csv").write_text("\n".join(hist_lines) + "\n", encoding="utf-8")
    _dump_fields(task, cfg, model, test_ds, cell_dir)
    return {"mode": mode, "n_t": n_t, "seed": seed, "value": value, "seconds": seconds}


def cmd_finetune(cfg) -> int:
    ft = cfg["finetune"]
    modes = list(ft["modes"])
    for mode in modes:
        if mode not in MODES or mode == "source":
            raise InvalidParams(f"finetune mode {mode!r} not in {MODES[1:]}")
    seeds = [int(s) for s in ft["seeds"]]
    if len(set(seeds)) != len(seeds):
        raise InvalidParams(f"seeds must be distinct, got {seeds}")
    cells = [
        {"cfg": cfg, "mode": mode, "n_t": int(n_t), "seed": seed}
        for mode in modes
        for n_t in ft["n_t"]
        for seed in seeds
    ]
    workers = int(os.environ.get("TLON_WORKERS", cfg.get("workers", 1)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]

    reports = []
    for mode in modes:
        for n_t in ft["n_t"]:
            got = [r for r in results if r["mode"] == mode and r["n_t"] == int(n_t)]
            got.sort(key=lambda r: r["seed"])
            reports.append(
                aggregate_seeds(
                    [r["value"] for r in got],
                    [r["seed"] for r in got],
                    task=cfg["task"],
                    mode=mode,
                    n_t=int(n_t),
                    seconds=float(np.mean([r["seconds"] for r in got])),
                )
            )
    out = _out_dir(cfg) / "report.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(reports, out)
    print(f"wrote {out} ({len(reports)} rows)")
    return 0


# ------------------------------------------------------------------- eval

def cmd_eval(cfg, checkpoint: str, dataset: str) -> int:
    model = load_checkpoint(checkpoint)
    ds = load_dataset(dataset)
    print(f"relative L2: {evaluate(model, ds):.6f}")
    return 0


# --------------------------------------------------------------------- uq

def cmd_uq(cfg, checkpoint: str | None, side: str) -> int:
    task = get_task(cfg["task"])
    if task.family != "brusselator":
        raise InvalidParams("uq is defined for the brusselator tasks")
    ckpt = Path(checkpoint) if checkpoint else _out_dir(cfg) / "source.tlon"
    if not ckpt.exists():
        raise MissingCheckpoint(f"uq needs a trained checkpoint at {ckpt}")
    model = load_checkpoint(ckpt)
    data = TaskData(task, cfg["gen"])
    n = int(cfg["uq"]["n_samples"])
    rng = RngStream(int(cfg["gen"]["seed"]), 9_000_000)
    fields = [data.sample_input(rng) for _ in range(n)]

    solver_out = np.stack([data.solve(f, side) for f in fields])
    solver_mean = solver_out.mean(axis=0)
    solver_var = solver_out.var(axis=0, ddof=1)

    it = iter(fields)
    coords = data.coords(side)
    point_idx = _uq_point_indices(cfg, data)
    moments = uq_moments(
        model, lambda _rng: next(it), n, rng, point_indices=point_idx, coords=coords
    )
    mean_err = float(
        np.linalg.norm(moments.mean - solver_mean) / np.linalg.norm(solver_mean)
    )
    var_err = float(np.linalg.norm(moments.variance - solver_var) / np.linalg.norm(solver_var))
    out_dir = _out_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "n_samples": n,
        "side": side,
        "mean_field_rel_l2": mean_err,
        "variance_field_rel_l2": var_err,
        "points": [
            {
                "index": int(i),
                "surrogate_mean": m,
                "surrogate_var": v,
                "solver_mean": float(solver_mean[i]),
                "solver_var": float(solver_var[i]),
            }
            for i, m, v in moments.points
        ],
    }
    (out_dir / "uq.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    write_tensors(
        out_dir / "uq-fields.tlon",
        {
            "surrogate_mean": moments.mean,
            "surrogate_var": moments.variance,
            "solver_mean": solver_mean,
            "solver_var": solver_var,
        },
    )
    write_sidecar(out_dir / "uq-fields.tlon", {"task": task.name, "side": side, "n": n})
    print(f"mean-field relative L2 vs solver MC: {mean_err:.4f}")
    print(f"variance-field relative L2 vs solver MC: {var_err:.4f} (reported, not gated)")
    return 0


def _uq_point_indices(cfg, data: TaskData) -> tuple[int, ...]:
    coords = data.source_coords
    t_want = float(cfg["uq"].get("t", 0.5))
    idxs = []
    for x, y in cfg["uq"]["points"]:
        d = (coords[:, 0] - x) ** 2 + (coords[:, 1] - y) ** 2 + (coords[:, 2] - t_want) ** 2
        idxs.append(int(np.argmin(d)))
    return tuple(idxs)


# ----------------------------------------------------------------- report

def cmd_report(inputs: list[str], out: str, md: str | None) -> int:
    rows = merge_reports(inputs)
    Path(out).write_text(rows_to_csv(rows), encoding="utf-8", newline="\n")
    if md:
        Path(md).write_text(render_markdown(rows), encoding="utf-8", newline="\n")
    print(f"merged {len(inputs)} report(s) into {out} ({len(rows)} rows)")
    return 0


# ------------------------------------------------------------------- main

def _build_parser() -> _Parser:
    parser = _Parser(prog="tlonlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", default=None, help="JSON config file")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY.PATH=VALUE",
            help="override a dotted config key (JSON-parsed value)",
        )

    common(sub.add_parser("gen", help="generate datasets for the configured task"))
    common(sub.add_parser("train-source", help="train the source surrogate"))
    common(sub.add_parser("finetune", help="run the (mode, n_t, seed) sweep"))
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_uq = sub.add_parser("uq", help="Monte Carlo moment estimation vs the solver")
    common(p_uq)
    p_uq.add_argument("--checkpoint", default=None)
    p_uq.add_argument("--side", choices=("source", "target"), default="source")
    p_rep = sub.add_parser("report", help="merge report CSVs and render markdown")
    p_rep.add_argument("inputs", nargs="+")
    p_rep.add_argument("--out", required=True)
    p_rep.add_argument("--md", default=None)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "report":
            return cmd_report(args.inputs, args.out, args.md)
        cfg = load_config(args.config, args.set)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train-source":
            return cmd_train_source(cfg)
        if args.command == "finetune":
            return cmd_finetune(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.dataset)
        if args.command == "uq":
            return cmd_uq(cfg, args.checkpoint, args.side)
        raise UsageError(f"unknown command {args.command}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (TlonError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
