"""JSON experiment configuration with dotted-key CLI overrides."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import InvalidParams

DEFAULT_CONFIG: dict = {
    "task": "burgers-tl13",
    "paths": {"data_dir": "data", "out_dir": "runs"},
    "gen": {
        "seed": 2024,
        "n_source_train": 500,
        "n_source_test": 100,
        "n_target_labeled": 250,
        "n_target_unlabeled": 200,
        "n_target_test": 100,
        "n_ood": 100,
        "darcy_grid": 32,
        "brusselator_grid": 28,
        "brusselator_nt": 10,
        "energy_fraction": 0.99,
        "preset": None,
    },
    "arch": {},  # optional overrides: branch_fc, trunk_fc, branch_conv, p
    "train": {
        "epochs": 400,
        "batch": 32,
        "lr": 1e-3,
        "seed": 7,
        "coord_batch": None,
    },
    "finetune": {
        "modes": ["transfer", "transfer-no-ceod", "scratch", "last-layer-only"],
        "n_t": [5, 20, 50, 100, 250],
        "seeds": [0, 1, 2],
        "epochs": 400,
        "lr": 1e-3,
        "lambda2_init": 10.0,
        "lambda2_lr": 0.1,
        "lambda2_ceiling": 1000.0,
        "ceod_lambda": 1e-3,
        "unlabeled_batch": 64,
        "labeled_batch": 64,
        "dump_samples": 2,
    },
    "uq": {"n_samples": 500, "points": [[0.37, 0.741], [0.926, 0.296]], "t": 0.5},
    "report": {"timing": "wall"},  # "none" zeroes the seconds column (byte-stable reruns)
    "workers": 1,
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(cfg: dict, dotted: str) -> None:
    if "=" not in dotted:
        raise InvalidParams(f"--set expects key.path=value, got {dotted!r}")
    path, raw = dotted.split("=", 1)
    keys = path.strip().split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise InvalidParams(f"--set path {path!r} collides with a non-dict value")
    node[keys[-1]] = value


def load_config(path: str | Path | None = None, sets: list[str] | None = None) -> dict:
    """Defaults <- JSON file <- --set overrides, merged in that order."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        file_cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(file_cfg, dict):
            raise InvalidParams(f"config file {path} must hold a JSON object")
        cfg = _deep_merge(cfg, file_cfg)
    for item in sets or []:
        _apply_set(cfg, item)
    return cfg
