"""Time steppers and masked-grid CG for the reference PDE solvers.

Status codes: 0 = ok, 1 = values exceeded the instability bound,
2 = CFL violation, 3 = iteration budget exhausted (CG only).
"""

from __future__ import annotations

import numpy as np

from ..backend import njit, pick

INSTABILITY_BOUND = 1e6


# ----------------------------------------------------------- Darcy flow CG

@njit(cache=True)
def cg_masked_numba(diag, coef, nbr, b, tol, max_iter):
    """Jacobi-preconditioned CG on A x = b with the masked 5-point stencil.

    nbr holds, per unknown, four indices into the padded solution vector;
    index n refers to the zero pad (Dirichlet neighbor).  A x =
    diag*x - sum_k coef[:,k] * x[nbr[:,k]].
    """
    n = b.shape[0]
    xp = np.zeros(n + 1)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = 0.0
    for i in range(n):
        rz += r[i] * z[i]
    bnorm = 0.0
    for i in range(n):
        bnorm += b[i] * b[i]
    bnorm = np.sqrt(bnorm)
    if bnorm == 0.0:
        return xp[:n].copy(), 0, 0
    pp = np.zeros(n + 1)
    ap = np.empty(n)
    for it in range(max_iter):
        for i in range(n):
            pp[i] = p[i]
        for i in range(n):
            acc = diag[i] * pp[i]
            for k in range(4):
                acc -= coef[i, k] * pp[nbr[i, k]]
            ap[i] = acc
        pap = 0.0
        for i in range(n):
            pap += p[i] * ap[i]
        alpha = rz / pap
        rnorm = 0.0
        for i in range(n):
            xp[i] += alpha * p[i]
            r[i] -= alpha * ap[i]
            rnorm += r[i] * r[i]
        if np.sqrt(rnorm) <= tol * bnorm:
            return xp[:n].copy(), it + 1, 0
        rz_new = 0.0
        for i in range(n):
            z[i] = r[i] / diag[i]
            rz_new += r[i] * z[i]
        beta = rz_new / rz
        rz = rz_new
        for i in range(n):
            p[i] = z[i] + beta * p[i]
    return xp[:n].copy(), max_iter, 3


def cg_masked_numpy(diag, coef, nbr, b, tol, max_iter):
    n = b.shape[0]
    xp = np.zeros(n + 1)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return xp[:n].copy(), 0, 0
    pp = np.zeros(n + 1)
    for it in range(max_iter):
        pp[:n] = p
        ap = diag * p - (coef * pp[nbr]).sum(axis=1)
        alpha = rz / float(p @ ap)
        xp[:n] += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= tol * bnorm:
            return xp[:n].copy(), it + 1, 0
        z = r / diag
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return xp[:n].copy(), max_iter, 3


cg_masked_kernel = pick(cg_masked_numba, cg_masked_numpy)


# ------------------------------------------------- Brusselator forward Euler

@njit(cache=True)
def brusselator_run_numba(u0, v0, a, b, d0, d1, dx, dt, nsteps, snap_steps, react):
    ny, nx = u0.shape
    u = u0.copy()
    v = v0.copy()
    snaps = np.zeros((snap_steps.shape[0], ny, nx))
    inv_dx2 = 1.0 / (dx * dx)
    si = 0
    for step in range(1, nsteps + 1):
        un = np.empty((ny, nx))
        vn = np.empty((ny, nx))
        for i in range(ny):
            for j in range(nx):
                lap_u = 0.0
                lap_v = 0.0
                if j + 1 < nx:
                    lap_u += u[i, j + 1] - u[i, j]
                    lap_v += v[i, j + 1] - v[i, j]
                if j > 0:
                    lap_u += u[i, j - 1] - u[i, j]
                    lap_v += v[i, j - 1] - v[i, j]
                if i + 1 < ny:
                    lap_u += u[i + 1, j] - u[i, j]
                    lap_v += v[i + 1, j] - v[i, j]
                if i > 0:
                    lap_u += u[i - 1, j] - u[i, j]
                    lap_v += v[i - 1, j] - v[i, j]
                uu = u[i, j]
                vv = v[i, j]
                ru = react * (a - (1.0 + b) * uu + vv * uu * uu)
                rv = react * (b * uu - vv * uu * uu)
                un[i, j] = uu + dt * (d0 * lap_u * inv_dx2 + ru)
                vn[i, j] = vv + dt * (d1 * lap_v * inv_dx2 + rv)
        u = un
        v = vn
        bound = 0.0
        for i in range(ny):
            for j in range(nx):
                au = abs(u[i, j])
                av = abs(v[i, j])
                if au > bound:
                    bound = au
                if av > bound:
                    bound = av
        if bound > INSTABILITY_BOUND or not np.isfinite(bound):
            return snaps, u, 1
        if si < snap_steps.shape[0] and step == snap_steps[si]:
            snaps[si] = v
            si += 1
    return snaps, u, 0


def _lap_noflux(f):
    out = np.zeros_like(f)
    out[:, 1:] += f[:, :-1] - f[:, 1:]
    out[:, :-1] += f[:, 1:] - f[:, :-1]
    out[1:, :] += f[:-1, :] - f[1:, :]
    out[:-1, :] += f[1:, :] - f[:-1, :]
    return out


def brusselator_run_numpy(u0, v0, a, b, d0, d1, dx, dt, nsteps, snap_steps, react):
    u = u0.copy()
    v = v0.copy()
    snaps = np.zeros((snap_steps.shape[0],) + u0.shape)
    inv_dx2 = 1.0 / (dx * dx)
    si = 0
    for step in range(1, nsteps + 1):
        uu2 = u * u
        ru = react * (a - (1.0 + b) * u + v * uu2)
        rv = react * (b * u - v * uu2)
        un = u + dt * (d0 * _lap_noflux(u) * inv_dx2 + ru)
        vn = v + dt * (d1 * _lap_noflux(v) * inv_dx2 + rv)
        u, v = un, vn
        bound = max(np.max(np.abs(u)), np.max(np.abs(v)))
        if bound > INSTABILITY_BOUND or not np.isfinite(bound):
            return snaps, u, 1
        if si < snap_steps.shape[0] and step == snap_steps[si]:
            snaps[si] = v
            si += 1
    return snaps, u, 0


brusselator_run_kernel = pick(brusselator_run_numba, brusselator_run_numpy)


# -------------------------------------------------- Burgers upwind + diffusion

@njit(cache=True)
def burgers_run_numba(u0, nu, dx, dt, nsteps):
    n = u0.shape[0]
    u = u0.copy()
    inv_dx = 1.0 / dx
    inv_dx2 = inv_dx * inv_dx
    cfl_cap = dx / dt
    for _step in range(nsteps):
        umax = 0.0
        for i in range(n):
            au = abs(u[i])
            if au > umax:
                umax = au
        if umax > cfl_cap:
            return u, 2
        if umax > INSTABILITY_BOUND or not np.isfinite(umax):
            return u, 1
        un = u.copy()
        for i in range(1, n - 1):
            if u[i] > 0.0:
                conv = u[i] * (u[i] - u[i - 1]) * inv_dx
            else:
                conv = u[i] * (u[i + 1] - u[i]) * inv_dx
            diff = nu * (u[i + 1] - 2.0 * u[i] + u[i - 1]) * inv_dx2
            un[i] = u[i] + dt * (diff - conv)
        u = un
    return u, 0


def burgers_run_numpy(u0, nu, dx, dt, nsteps):
    u = u0.copy()
    cfl_cap = dx / dt
    for _step in range(nsteps):
        umax = float(np.max(np.abs(u)))
        if umax > cfl_cap:
            return u, 2
        if umax > INSTABILITY_BOUND or not np.isfinite(umax):
            return u, 1
        mid = u[1:-1]
        back = (mid - u[:-2]) / dx
        fwd = (u[2:] - mid) / dx
        conv = mid * np.where(mid > 0.0, back, fwd)
        diff = nu * (u[2:] - 2.0 * mid + u[:-2]) / (dx * dx)
        un = u.copy()
        un[1:-1] = mid + dt * (diff - conv)
        u = un
    return u, 0


burgers_run_kernel = pick(burgers_run_numba, burgers_run_numpy)
