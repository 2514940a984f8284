"""Task definitions and dataset generation.

Each task pairs a source PDE problem with a target problem that shares the
input distribution (same random-field sampler on the same sensor grid) but
shifts the conditional: a different solve geometry (Darcy), reaction
parameter (Brusselator) or diffusion coefficient (Burgers).

Positivity convention: conductivities and initial concentrations are
exp(field) of the zero-mean Gaussian field (log-normal); Burgers initial
velocities use the raw field.
"""

from __future__ import annotations

import math
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .deeponet import ArchConfig, OperatorDataset
from .errors import InvalidParams
from .pde import (
    BrusselatorParams,
    BurgersParams,
    Grid2D,
    make_geometry,
    solve_brusselator,
    solve_burgers,
    solve_darcy,
)
from .randfield import (
    DEFAULT_ENERGY_FRACTION,
    FIELD_PRESETS,
    KleBasis,
    RngStream,
    kle_decompose,
    sample_field,
    se_covariance,
)
from .tlonio import read_sidecar, read_tensors, write_sidecar, write_tensors

BURGERS_NU_TARGET = 0.001 / math.pi


@dataclass(frozen=True)
class TaskSpec:
    name: str
    family: str  # darcy | brusselator | burgers
    preset: str
    source_geometry: str | None = None
    target_geometry: str | None = None
    b_source: float | None = None
    b_target: float | None = None
    nu_source: float | None = None
    nu_target: float | None = None


TASKS: dict[str, TaskSpec] = {
    "darcy-tl1": TaskSpec("darcy-tl1", "darcy", "darcy", "square", "equilateral-triangle"),
    "darcy-tl2": TaskSpec("darcy-tl2", "darcy", "darcy", "square", "right-triangle"),
    "darcy-tl3": TaskSpec("darcy-tl3", "darcy", "darcy", "square", "triangle-notch"),
    "darcy-tl4": TaskSpec("darcy-tl4", "darcy", "darcy", "square-vnotch", "square-2hnotch"),
    "brusselator-tl7": TaskSpec(
        "brusselator-tl7", "brusselator", "brusselator-source", b_source=2.2, b_target=1.7
    ),
    "brusselator-tl8": TaskSpec(
        "brusselator-tl8", "brusselator", "brusselator-source", b_source=2.2, b_target=3.0
    ),
    "burgers-tl13": TaskSpec(
        "burgers-tl13", "burgers", "burgers", nu_source=0.2, nu_target=BURGERS_NU_TARGET
    ),
}

# role -> (filename stem, RNG stream block); blocks keep per-sample streams disjoint
ROLE_STREAMS = {
    "source-train": 0,
    "source-test": 1_000_000,
    "target-labeled": 2_000_000,
    "target-unlabeled": 3_000_000,
    "target-test": 4_000_000,
    "ood1": 5_000_000,
    "ood2": 6_000_000,
}


def get_task(name: str) -> TaskSpec:
    if name not in TASKS:
        raise InvalidParams(f"unknown task {name!r}; options: {sorted(TASKS)}")
    return TASKS[name]


def default_arch(task: TaskSpec, gen_cfg: dict) -> ArchConfig:
    """Desk-scale defaults: a three-layer conv stem keeps the trainable
    fully-connected share under the fine-tune economy bar."""
    if task.family == "darcy":
        n = int(gen_cfg.get("darcy_grid", 32))
        return ArchConfig(
            branch_kind="cnn",
            sensor_shape=(n, n),
            coord_dim=2,
            branch_conv=((32, 3, 2), (64, 3, 2), (64, 3, 2)),
            branch_fc=(80, 32),
            trunk_fc=(128, 128, 128, 32),
        )
    if task.family == "brusselator":
        n = int(gen_cfg.get("brusselator_grid", 28))
        return ArchConfig(
            branch_kind="cnn",
            sensor_shape=(n, n),
            coord_dim=3,
            branch_conv=((32, 3, 2), (64, 3, 2), (64, 3, 2)),
            branch_fc=(80, 32),
            trunk_fc=(128, 128, 128, 32),
        )
    sensors = BurgersParams(nu=task.nu_source).n_points
    return ArchConfig(
        branch_kind="fnn",
        sensor_shape=(sensors,),
        coord_dim=1,
        branch_conv=(),
        branch_fc=(128, 128, 32),
        trunk_fc=(64, 64, 64, 32),
    )


class TaskData:
    """Generation engine: shared input sampler plus source/target solvers."""

    def __init__(self, task: TaskSpec, gen_cfg: dict):
        self.task = task
        self.gen_cfg = gen_cfg
        energy = float(gen_cfg.get("energy_fraction", DEFAULT_ENERGY_FRACTION))
        preset = gen_cfg.get("preset") or task.preset
        self.params = FIELD_PRESETS[preset]
        self.preset_name = preset

        if task.family == "darcy":
            n = int(gen_cfg.get("darcy_grid", 32))
            self.source_grid = make_geometry(task.source_geometry, n, n)
            self.target_grid = make_geometry(task.target_geometry, n, n)
            pts = self.source_grid.node_coords()
            self.sensor_shape = (n, n)
            self.source_coords = self.source_grid.mask_coords()
            self.target_coords = self.target_grid.mask_coords()
        elif task.family == "brusselator":
            n = int(gen_cfg.get("brusselator_grid", 28))
            self.source_grid = Grid2D(n, n)
            self.target_grid = self.source_grid
            pts = self.source_grid.node_coords()
            self.sensor_shape = (n, n)
            n_t = int(gen_cfg.get("brusselator_nt", 10))
            self.src_params = BrusselatorParams(b=task.b_source, n_t=n_t)
            self.tgt_params = BrusselatorParams(b=task.b_target, n_t=n_t)
            self.source_coords = _space_time_coords(self.source_grid, n_t)
            self.target_coords = self.source_coords
        else:  # burgers
            self.src_params = BurgersParams(nu=task.nu_source)
            self.tgt_params = BurgersParams(nu=task.nu_target)
            xs = self.src_params.xs()
            pts = xs[:, None]
            self.sensor_shape = (xs.size,)
            self.source_coords = pts
            self.target_coords = pts

        cov = se_covariance(pts, self.params)
        self.basis = kle_decompose(cov, energy, points=pts)
        self._ood_bases: dict[str, KleBasis] = {}

    def ood_basis(self, which: str) -> KleBasis:
        if which not in self._ood_bases:
            preset = FIELD_PRESETS[f"brusselator-{which}"]
            cov = se_covariance(self.basis.points, preset)
            energy = float(self.gen_cfg.get("energy_fraction", DEFAULT_ENERGY_FRACTION))
            self._ood_bases[which] = kle_decompose(cov, energy, points=self.basis.points)
        return self._ood_bases[which]

    def sample_input(self, rng: RngStream, basis: KleBasis | None = None) -> np.ndarray:
        """One branch input with the task's positivity transform applied."""
        field = sample_field(basis or self.basis, rng)
        if self.task.family in ("darcy", "brusselator"):
            return np.exp(field).reshape(self.sensor_shape)
        return field.reshape(self.sensor_shape)

    def solve(self, branch_input: np.ndarray, side: str) -> np.ndarray:
        """Reference outputs at the side's coords for one input sample."""
        if self.task.family == "darcy":
            grid = self.source_grid if side == "source" else self.target_grid
            g = np.ones((grid.ny, grid.nx))
            h = solve_darcy(branch_input, g, grid)
            return h[grid.mask]
        if self.task.family == "brusselator":
            params = self.src_params if side == "source" else self.tgt_params
            h1 = np.full(self.sensor_shape, params.a)
            snaps = solve_brusselator(h1, branch_input, params, self.source_grid)
            return snaps.ravel()
        params = self.src_params if side == "source" else self.tgt_params
        return solve_burgers(branch_input, params)

    def coords(self, side: str) -> np.ndarray:
        return self.source_coords if side == "source" else self.target_coords

    def build(self, role: str, n: int, seed: int, with_outputs: bool = True,
              basis: KleBasis | None = None, side: str | None = None) -> OperatorDataset:
        """n samples for a role; per-sample RNG streams keep generation
        order-independent and parallelizable."""
        side = side or ("source" if role.startswith("source") else "target")
        base = ROLE_STREAMS[role]
        inputs = []
        outputs = [] if with_outputs else None
        for i in range(n):
            rng = RngStream(seed, base + i)
            x = self.sample_input(rng, basis)
            inputs.append(x)
            if with_outputs:
                outputs.append(self.solve(x, side))
        stacked = np.stack(inputs)
        outs = np.stack(outputs) if with_outputs else None
        ds_role = {
            "ood1": "ood",
            "ood2": "ood",
        }.get(role, role)
        return OperatorDataset(stacked, self.coords(side), outs, ds_role)


def _space_time_coords(grid: Grid2D, n_t: int) -> np.ndarray:
    """(x, y, t) rows matching a (n_t, ny, nx) snapshot tensor flattened."""
    xx, yy = np.meshgrid(grid.xs, grid.ys)
    times = (np.arange(n_t) + 1) / n_t
    rows = []
    for t in times:
        rows.append(np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, t)]))
    return np.concatenate(rows, axis=0)


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10, cwd=Path(__file__).parent,
        )
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def dataset_filename(role: str) -> str:
    return f"{role}.tlon"


def write_dataset(path, ds: OperatorDataset, meta: dict) -> None:
    tensors = {"branch_inputs": ds.branch_inputs, "coords": ds.coords}
    if ds.outputs is not None:
        tensors["outputs"] = ds.outputs
    write_tensors(path, tensors)
    write_sidecar(path, meta)


def load_dataset(path) -> OperatorDataset:
    tensors = read_tensors(path)
    meta = read_sidecar(path)
    return OperatorDataset(
        tensors["branch_inputs"],
        tensors["coords"],
        tensors.get("outputs"),
        meta["role"],
    )


def generate_all(task_name: str, gen_cfg: dict, out_dir) -> list[str]:
    """Write every dataset file for a task; returns the file names."""
    task = get_task(task_name)
    data = TaskData(task, gen_cfg)
    seed = int(gen_cfg.get("seed", 2024))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    describe = _git_describe()

    plan = [
        ("source-train", int(gen_cfg.get("n_source_train", 500)), True, None, "source"),
        ("source-test", int(gen_cfg.get("n_source_test", 100)), True, None, "source"),
        ("target-labeled", int(gen_cfg.get("n_target_labeled", 250)), True, None, "target"),
        ("target-unlabeled", int(gen_cfg.get("n_target_unlabeled", 200)), False, None, "target"),
        ("target-test", int(gen_cfg.get("n_target_test", 100)), True, None, "target"),
    ]
    if task.family == "brusselator":
        n_ood = int(gen_cfg.get("n_ood", 100))
        plan.append(("ood1", n_ood, True, data.ood_basis("ood1"), "target"))
        plan.append(("ood2", n_ood, True, data.ood_basis("ood2"), "target"))

    written = []
    for role, n, with_outputs, basis, side in plan:
        ds = data.build(role, n, seed, with_outputs=with_outputs, basis=basis, side=side)
        meta = {
            "task": task.name,
            "role": ds.role,
            "file_role": role,
            "preset": data.preset_name,
            "seed": seed,
            "n": n,
            "solver": _solver_meta(data, side),
            "git": describe,
        }
        name = dataset_filename(role)
        write_dataset(out_dir / name, ds, meta)
        written.append(name)
    return written


def _solver_meta(data: TaskData, side: str) -> dict:
    task = data.task
    if task.family == "darcy":
        geom = task.source_geometry if side == "source" else task.target_geometry
        return {"family": "darcy", "geometry": geom, "grid": data.source_grid.nx, "g": 1.0}
    if task.family == "brusselator":
        p = data.src_params if side == "source" else data.tgt_params
        return {
            "family": "brusselator", "a": p.a, "b": p.b, "d0": p.d0, "d1": p.d1,
            "n_t": p.n_t, "grid": data.source_grid.nx,
        }
    p = data.src_params if side == "source" else data.tgt_params
    return {"family": "burgers", "nu": p.nu, "dx": p.dx, "dt": p.dt}
