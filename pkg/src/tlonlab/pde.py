"""Reference PDE solvers that generate labeled data.

Steady Darcy flow (masked 5-point stencil + CG), the Brusselator
reaction-diffusion system (forward Euler, no-flux boundaries) and viscous
Burgers (upwind convection + central diffusion), plus structured-grid
geometry masks and bilinear interpolation.

Node-centered grids over the unit square unless an extent overrides it.
Fields are (ny, nx) arrays indexed [row=y, col=x].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import Instability, InvalidParams, OutOfDomain, SolverDiverged, UnknownGeometry
from .kernels.pde import brusselator_run_kernel, burgers_run_kernel, cg_masked_kernel

GEOMETRY_NAMES = (
    "square",
    "equilateral-triangle",
    "right-triangle",
    "triangle-notch",
    "square-vnotch",
    "square-2hnotch",
)

_EDGE_EPS = 1e-12


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    extent: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 1.0), (0.0, 1.0))
    mask: np.ndarray = field(default=None)  # bool (ny, nx); None means all inside

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise InvalidParams(f"Grid2D: need nx, ny >= 8, got {self.nx}x{self.ny}")
        mask = self.mask
        if mask is None:
            mask = np.ones((self.ny, self.nx), dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (self.ny, self.nx):
                raise InvalidParams(f"Grid2D: mask shape {mask.shape} != ({self.ny}, {self.nx})")
        if int(mask.sum()) < 4:
            raise InvalidParams("Grid2D: mask must keep at least 4 nodes")
        object.__setattr__(self, "mask", mask)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.extent[0][0], self.extent[0][1], self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.extent[1][0], self.extent[1][1], self.ny)

    @property
    def hx(self) -> float:
        return (self.extent[0][1] - self.extent[0][0]) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.extent[1][1] - self.extent[1][0]) / (self.ny - 1)

    def node_coords(self) -> np.ndarray:
        """(nx*ny, 2) coordinates of every node, row-major over (y, x)."""
        xx, yy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def mask_coords(self) -> np.ndarray:
        """Coordinates of mask-true nodes, row-major order."""
        return self.node_coords()[self.mask.ravel()]


def make_geometry(name: str, nx: int = 32, ny: int = 32) -> Grid2D:
    """Boolean mask approximating the named geometry on a structured grid.

    Notches are one grid cell wide (the physical notch is far below desk
    resolution) and cut from the boundary inward to half the figure height.
    """
    if name not in GEOMETRY_NAMES:
        raise UnknownGeometry(f"unknown geometry {name!r}; options: {GEOMETRY_NAMES}")
    xs = np.linspace(0.0, 1.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    xx, yy = np.meshgrid(xs, ys)
    s3 = math.sqrt(3.0)
    if name == "square":
        mask = np.ones((ny, nx), dtype=bool)
    elif name == "equilateral-triangle":
        mask = (yy <= s3 * xx + _EDGE_EPS) & (yy <= s3 * (1.0 - xx) + _EDGE_EPS)
    elif name == "right-triangle":
        mask = xx + yy <= 1.0 + _EDGE_EPS
    elif name == "triangle-notch":
        mask = (yy <= s3 * xx + _EDGE_EPS) & (yy <= s3 * (1.0 - xx) + _EDGE_EPS)
        j = int(np.argmin(np.abs(xs - 0.5)))
        mask[:, j] &= ys > s3 / 4.0
    elif name == "square-vnotch":
        mask = np.ones((ny, nx), dtype=bool)
        j = int(np.argmin(np.abs(xs - 0.5)))
        mask[:, j] = ys > 0.5
    else:  # square-2hnotch
        mask = np.ones((ny, nx), dtype=bool)
        i_lo = int(np.argmin(np.abs(ys - 1.0 / 3.0)))
        i_hi = int(np.argmin(np.abs(ys - 2.0 / 3.0)))
        mask[i_lo, xs <= 0.5 + _EDGE_EPS] = False
        mask[i_hi, xs >= 0.5 - _EDGE_EPS] = False
    return Grid2D(nx=nx, ny=ny, mask=mask)


# ------------------------------------------------------------------ Darcy

def solve_darcy(
    k_field: np.ndarray,
    g_field: np.ndarray,
    grid: Grid2D,
    tol: float = 1e-10,
) -> np.ndarray:
    """Steady solution of div(K grad h) = g with h = 0 on the mask boundary.

    5-point finite differences with harmonic face conductivities, solved by
    diagonally preconditioned conjugate gradients to a relative residual of
    ``tol``.  Nodes outside the mask and on its boundary stay at zero.
    Note the sign: with g = 1 the interior solution is negative.
    """
    k = np.asarray(k_field, dtype=np.float64)
    g = np.asarray(g_field, dtype=np.float64)
    if k.shape != (grid.ny, grid.nx) or g.shape != (grid.ny, grid.nx):
        raise InvalidParams(
            f"solve_darcy: fields must be ({grid.ny}, {grid.nx}), got {k.shape} and {g.shape}"
        )
    inside = grid.mask
    if np.any(k[inside] <= 0.0):
        raise InvalidParams("solve_darcy: conductivity must be positive inside the mask")
    if not np.all(np.isfinite(g[inside])):
        raise InvalidParams("solve_darcy: forcing must be finite inside the mask")

    padded = np.zeros((grid.ny + 2, grid.nx + 2), dtype=bool)
    padded[1:-1, 1:-1] = inside
    nbr_in = (
        padded[2:, 1:-1] & padded[:-2, 1:-1] & padded[1:-1, 2:] & padded[1:-1, :-2]
    )
    interior = inside & nbr_in
    n = int(interior.sum())
    h = np.zeros((grid.ny, grid.nx))
    if n == 0:
        return h

    idx = -np.ones((grid.ny, grid.nx), dtype=np.int64)
    idx[interior] = np.arange(n)
    ii, jj = np.nonzero(interior)
    offsets = ((0, 1), (0, -1), (1, 0), (-1, 0))
    inv_h2 = (1.0 / grid.hx**2, 1.0 / grid.hx**2, 1.0 / grid.hy**2, 1.0 / grid.hy**2)
    coef = np.empty((n, 4))
    nbr = np.full((n, 4), n, dtype=np.int64)  # index n = zero pad (Dirichlet)
    kc = k[ii, jj]
    for s, (di, dj) in enumerate(offsets):
        kn = k[ii + di, jj + dj]
        coef[:, s] = (2.0 * kc * kn / (kc + kn)) * inv_h2[s]
        nidx = idx[ii + di, jj + dj]
        nbr[:, s] = np.where(nidx >= 0, nidx, n)
    diag = coef.sum(axis=1)
    b = -g[ii, jj]  # -div(K grad h) = -g

    max_iter = 50 * n
    x, _iters, status = cg_masked_kernel(
        np.ascontiguousarray(diag),
        np.ascontiguousarray(coef),
        np.ascontiguousarray(nbr),
        np.ascontiguousarray(b),
        tol,
        max_iter,
    )
    if status == 3:
        raise SolverDiverged(f"solve_darcy: CG exceeded {max_iter} iterations")
    h[interior] = x
    return h


# ------------------------------------------------------------ Brusselator

@dataclass(frozen=True)
class BrusselatorParams:
    b: float
    a: float = 1.0
    d0: float = 1.0
    d1: float = 0.1
    dt: float | None = None  # None picks the largest stable step with aligned snapshots
    n_t: int = 10

    def validate(self) -> None:
        if min(self.a, self.b, self.d0, self.d1) <= 0.0 or self.n_t < 1:
            raise InvalidParams(f"BrusselatorParams must be positive: {self}")
        if self.dt is not None and self.dt <= 0.0:
            raise InvalidParams(f"BrusselatorParams: dt must be positive, got {self.dt}")


def brusselator_stable_dt(params: BrusselatorParams, grid: Grid2D) -> float:
    h = min(grid.hx, grid.hy)
    return 0.9 * h * h / (4.0 * max(params.d0, params.d1))


def solve_brusselator(
    h1_init: np.ndarray,
    h2_init: np.ndarray,
    params: BrusselatorParams,
    grid: Grid2D,
    reactions: bool = True,
) -> np.ndarray:
    """Concentration v at n_t equispaced times in (0, 1].

    Forward Euler with a conservative 5-point Laplacian and no-flux
    boundaries on the full rectangle; initial fields must be non-negative.
    ``reactions=False`` is a test hook that steps pure diffusion, under
    which the spatial mean of each species is conserved.
    """
    params.validate()
    u0 = np.asarray(h1_init, dtype=np.float64)
    v0 = np.asarray(h2_init, dtype=np.float64)
    if u0.shape != (grid.ny, grid.nx) or v0.shape != (grid.ny, grid.nx):
        raise InvalidParams(
            f"solve_brusselator: fields must be ({grid.ny}, {grid.nx}), "
            f"got {u0.shape} and {v0.shape}"
        )
    if np.any(u0 < 0.0) or np.any(v0 < 0.0):
        raise InvalidParams("solve_brusselator: initial fields must be non-negative")
    bound = brusselator_stable_dt(params, grid)
    if params.dt is None:
        nsteps = params.n_t * math.ceil(math.ceil(1.0 / bound) / params.n_t)
        dt = 1.0 / nsteps
    else:
        dt = params.dt
        if dt > bound:
            raise InvalidParams(
                f"solve_brusselator: dt={dt:g} violates the diffusion stability bound {bound:g}"
            )
        nsteps = int(round(1.0 / dt))
    snap_steps = np.array(
        [int(round((k + 1) * nsteps / params.n_t)) for k in range(params.n_t)], dtype=np.int64
    )
    if grid.hx != grid.hy:
        raise InvalidParams("solve_brusselator: requires square cells (hx == hy)")
    snaps, _u_final, status = brusselator_run_kernel(
        np.ascontiguousarray(u0),
        np.ascontiguousarray(v0),
        params.a,
        params.b,
        params.d0,
        params.d1,
        grid.hx,
        dt,
        nsteps,
        snap_steps,
        1.0 if reactions else 0.0,
    )
    if status == 1:
        raise Instability("solve_brusselator: solution exceeded the instability bound")
    return snaps


# ----------------------------------------------------------------- Burgers

@dataclass(frozen=True)
class BurgersParams:
    nu: float
    dx: float = 0.03125
    dt: float = 0.001
    # domain [-1, 1], horizon t in [0, 1]

    def validate(self) -> None:
        if self.nu <= 0.0 or self.dx <= 0.0 or self.dt <= 0.0:
            raise InvalidParams(f"BurgersParams must be positive: {self}")
        if self.nu * self.dt / (self.dx * self.dx) > 0.5:
            raise InvalidParams(
                f"BurgersParams: explicit diffusion unstable "
                f"(nu*dt/dx^2 = {self.nu * self.dt / self.dx**2:.3f} > 0.5)"
            )

    @property
    def n_points(self) -> int:
        return int(round(2.0 / self.dx)) + 1

    def xs(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n_points)


def solve_burgers(u0: np.ndarray, params: BurgersParams) -> np.ndarray:
    """u(x, t=1) by upwind convection and central diffusion.

    Endpoints are pinned to the initial values (Dirichlet); the advective
    CFL condition max|u| dt/dx <= 1 is asserted during stepping.
    """
    params.validate()
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (params.n_points,):
        raise InvalidParams(f"solve_burgers: u0 must have {params.n_points} points, got {u0.shape}")
    nsteps = int(round(1.0 / params.dt))
    u, status = burgers_run_kernel(np.ascontiguousarray(u0), params.nu, params.dx, params.dt, nsteps)
    if status == 2:
        raise Instability("solve_burgers: advective CFL condition max|u|*dt/dx <= 1 violated")
    if status == 1:
        raise Instability("solve_burgers: solution exceeded the instability bound")
    return u


# ----------------------------------------------------------- interpolation

def interp_to_target(
    field: np.ndarray,
    target_points: np.ndarray,
    extent: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 1.0), (0.0, 1.0)),
) -> np.ndarray:
    """Bilinear interpolation from a structured (ny, nx) field to points (m, 2)."""
    f = np.asarray(field, dtype=np.float64)
    pts = np.asarray(target_points, dtype=np.float64)
    if f.ndim != 2 or pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidParams("interp_to_target: field must be (ny, nx), points (m, 2)")
    (x0, x1), (y0, y1) = extent
    ny, nx = f.shape
    if np.any(pts[:, 0] < x0 - _EDGE_EPS) or np.any(pts[:, 0] > x1 + _EDGE_EPS) or np.any(
        pts[:, 1] < y0 - _EDGE_EPS
    ) or np.any(pts[:, 1] > y1 + _EDGE_EPS):
        raise OutOfDomain("interp_to_target: a target point lies outside the source extent")
    gx = np.clip((pts[:, 0] - x0) / (x1 - x0) * (nx - 1), 0.0, nx - 1)
    gy = np.clip((pts[:, 1] - y0) / (y1 - y0) * (ny - 1), 0.0, ny - 1)
    # snap points that coincide with grid nodes up to roundoff
    gx = np.where(np.abs(gx - np.round(gx)) < 1e-9, np.round(gx), gx)
    gy = np.where(np.abs(gy - np.round(gy)) < 1e-9, np.round(gy), gy)
    jx = np.minimum(gx.astype(np.int64), nx - 2)
    iy = np.minimum(gy.astype(np.int64), ny - 2)
    tx = gx - jx
    ty = gy - iy
    return (
        f[iy, jx] * (1 - tx) * (1 - ty)
        + f[iy, jx + 1] * tx * (1 - ty)
        + f[iy + 1, jx] * (1 - tx) * ty
        + f[iy + 1, jx + 1] * tx * ty
    )
