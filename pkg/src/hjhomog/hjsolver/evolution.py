"""Explicit time marching for the viscous Hamilton-Jacobi initial value problem

    u_t - eps * tr(A(x/eps) D^2 u) + H(Du, x/eps) = 0,   u(., 0) = g.

Forward Euler in time with the Lax-Friedrichs flux in space.  The step obeys
the double CFL restriction

    dt <= 0.4 * min( h / sum_i alpha_i ,  h^2 / (2 d eps max|A|) )

with alpha_i the global per-axis gradient bound of H over the current slope
range; by default the step is chosen adaptively from this rule, and a
user-supplied dt is validated against it before any stepping happens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..environment import CoefficientSet
from ..errors import ConfigurationError, SolverError
from .grids import SolverGrid

_SAFETY = 0.4


def _shift_axis(u: np.ndarray, ax: int, step: int, periodic: bool) -> np.ndarray:
    if periodic:
        return np.roll(u, -step, axis=ax)
    sl = [slice(None)] * u.ndim
    sl[ax] = slice(1, None) if step > 0 else slice(0, -1)
    out = u[tuple(sl)]
    edge = [slice(None)] * u.ndim
    edge[ax] = slice(-1, None) if step > 0 else slice(0, 1)
    return np.concatenate([out, u[tuple(edge)]] if step > 0
                          else [u[tuple(edge)], out], axis=ax)


def _axis_alpha(spec, a_max, A_rows, b_max, P):
    d = len(P)
    Pn = float(np.linalg.norm(P))
    alpha = np.zeros(d)
    if spec.hamiltonian == "power-model":
        q = spec.q
        for i in range(d):
            if q >= 2.0:
                alpha[i] = q * a_max * (Pn ** (q - 2.0)) * P[i] if Pn > 0 else 0.0
            else:
                alpha[i] = q * a_max * P[i] ** (q - 1.0) if P[i] > 0 else 0.0
    else:
        for i in range(d):
            alpha[i] = 2.0 * float(A_rows[i] @ P) + b_max[i]
    return alpha


@dataclass(frozen=True)
class EvolutionField:
    grid: SolverGrid
    eps_scale: float
    times: np.ndarray
    snapshots: np.ndarray
    initial: np.ndarray
    cfl: dict = field(compare=False, default_factory=dict)

    def at_time(self, t: float) -> np.ndarray:
        idx = np.where(np.isclose(self.times, t, rtol=0, atol=1e-12))[0]
        if len(idx) == 0:
            raise ConfigurationError(f"time {t} was not stored; stored: {self.times}")
        return self.snapshots[idx[0]]


def solve_ivp(coeffs: CoefficientSet, g, T: float, grid: SolverGrid,
              eps_scale: float = 1.0, *, dt: float | None = None,
              snapshot_times=None) -> EvolutionField:
    """March the initial value problem to time T, storing requested snapshots.

    ``g`` is a callable on points or an array on the grid.  Boundary handling
    follows grid.boundary: "frozen-value" keeps the outermost layer at its
    initial data (valid strictly inside the numerical domain of dependence),
    "periodic" wraps with period n_side * h per axis.
    """
    if T <= 0:
        raise ConfigurationError("T must be positive")
    if eps_scale <= 0:
        raise ConfigurationError("eps_scale must be positive")
    if grid.boundary == "dirichlet-cone":
        raise ConfigurationError("solve_ivp expects frozen-value or periodic boundaries")
    d, h = grid.d, grid.h
    periodic = grid.boundary == "periodic"
    pts = grid.node_points()
    u = np.asarray(g(pts) if callable(g) else g, dtype=float).copy()
    if u.shape != grid.shape:
        raise ConfigurationError("initial data shape does not match the grid")

    ypts = pts / eps_scale
    spec = coeffs.spec
    flat = ypts.reshape(-1, d)
    a_arr = coeffs.field_at(coeffs.a, flat).reshape(grid.shape)
    V_arr = coeffs.field_at(coeffs.V, flat).reshape(grid.shape)
    A_arr = coeffs.field_at(coeffs.A, flat).reshape(grid.shape + (d, d))
    b_arr = coeffs.field_at(coeffs.b, flat).reshape(grid.shape + (d,))
    a_max = float(a_arr.max())
    A_rows = np.abs(A_arr).max(axis=tuple(range(d)))
    b_max = np.abs(b_arr).max(axis=tuple(range(d)))
    A_op = float(np.linalg.eigvalsh(A_arr).max()) if np.any(A_arr) else 0.0

    snaps = sorted(set(float(t) for t in (snapshot_times if snapshot_times is not None else [T])))
    if any(t <= 0 or t > T + 1e-12 for t in snaps):
        raise ConfigurationError("snapshot times must lie in (0, T]")

    interior = np.ones(grid.shape, dtype=bool)
    if not periodic:
        for ax in range(d):
            sl = [slice(None)] * d
            for edge in (0, -1):
                sl[ax] = edge
                interior[tuple(sl)] = False

    def step_bound(current):
        slopes = []
        for ax in range(d):
            up = _shift_axis(current, ax, +1, periodic)
            dn = _shift_axis(current, ax, -1, periodic)
            slopes.append(max(np.abs(up - current).max(), np.abs(current - dn).max()) / h)
        P = np.array(slopes) + 1e-12
        alpha = _axis_alpha(spec, a_max, A_rows, b_max, P)
        lim = np.inf
        s = float(alpha.sum())
        if s > 0:
            lim = h / s
        if eps_scale * A_op > 0:
            lim = min(lim, h * h / (2.0 * d * eps_scale * A_op))
        return _SAFETY * lim, alpha

    bound0, _ = step_bound(u)
    if dt is not None:
        if dt <= 0:
            raise ConfigurationError("dt must be positive")
        if dt > bound0:
            raise ConfigurationError(
                f"dt = {dt:.3g} violates the CFL bound {bound0:.3g} for the initial data"
            )

    times_out = [0.0]
    snaps_out = [u.copy()]
    t = 0.0
    next_snap = 0
    cfl = {"initial_bound": bound0, "min_bound": bound0, "fixed_dt": dt}
    while t < T - 1e-12 and next_snap < len(snaps):
        bound, alpha = step_bound(u)
        cfl["min_bound"] = min(cfl["min_bound"], bound)
        if dt is not None:
            if dt > bound * (1.0 + 1e-9):
                raise SolverError(
                    f"CFL bound shrank below the fixed dt at t={t:.4g} "
                    f"({bound:.3g} < {dt:.3g})"
                )
            step = dt
        else:
            step = bound
        step = min(step, snaps[next_snap] - t)

        central = []
        diss = np.zeros_like(u)
        for ax in range(d):
            up = _shift_axis(u, ax, +1, periodic)
            dn = _shift_axis(u, ax, -1, periodic)
            central.append((up - dn) / (2.0 * h))
            diss += alpha[ax] * (up + dn - 2.0 * u) / (2.0 * h)
        grad = np.stack(central, axis=-1)
        if spec.hamiltonian == "power-model":
            Hc = a_arr * np.linalg.norm(grad, axis=-1) ** spec.q - V_arr
        else:
            Hc = (np.einsum("...i,...ij,...j->...", grad, A_arr, grad)
                  + np.einsum("...i,...i->...", b_arr, grad) - V_arr)
        ell = np.zeros_like(u)
        if A_op > 0:
            for ax in range(d):
                up = _shift_axis(u, ax, +1, periodic)
                dn = _shift_axis(u, ax, -1, periodic)
                ell += A_arr[..., ax, ax] * (up + dn - 2.0 * u) / (h * h)
            for ax in range(d):
                for ay in range(ax + 1, d):
                    Axy = A_arr[..., ax, ay]
                    if not np.any(Axy):
                        continue
                    upp = _shift_axis(_shift_axis(u, ax, +1, periodic), ay, +1, periodic)
                    umm = _shift_axis(_shift_axis(u, ax, -1, periodic), ay, -1, periodic)
                    upm = _shift_axis(_shift_axis(u, ax, +1, periodic), ay, -1, periodic)
                    ump = _shift_axis(_shift_axis(u, ax, -1, periodic), ay, +1, periodic)
                    ell += 2.0 * Axy * (upp + umm - upm - ump) / (4.0 * h * h)
        rate = eps_scale * ell - (Hc - diss)
        if periodic:
            u = u + step * rate
        else:
            u = np.where(interior, u + step * rate, u)
        t += step
        if abs(t - snaps[next_snap]) < 1e-12:
            times_out.append(snaps[next_snap])
            snaps_out.append(u.copy())
            next_snap += 1

    return EvolutionField(grid=grid, eps_scale=eps_scale,
                          times=np.array(times_out),
                          snapshots=np.stack(snaps_out),
                          initial=snaps_out[0], cfl=cfl)
