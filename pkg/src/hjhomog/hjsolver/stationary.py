"""Stationary solvers: the metric problem and the discounted cell problem.

Both are driven to steady state by Gauss-Seidel sweeps of the monotone
Lax-Friedrichs discretization (see kernels.py).  The metric problem

    -tr(A D^2 m) + H(Dm, y) = mu   outside B_1(z),   m = 0 on B_1(z),

is posed on a box around z; the outer node layer holds the Dirichlet cone
beta_hi * (|y - z| - 1), with beta_hi steep enough that the boundary acts as
an outflow barrier and never pulls the interior down.  Nodes adjacent to the
clamped ball use cut arms to the true sphere, which removes the O(h) bias a
pixelated ball would cause.

The discounted problem

    eps*v - tr(A D^2 v) + H(p + Dv, y) = 0   on the torus

reuses the same sweeps with periodic indexing, starting from the constant
supersolution max_y(-H(p, y)) / eps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..environment import (CoefficientSet, EnvSpec, _ball_mask,
                           _bounds_on_mask, _edge_lipschitz)
from ..errors import ConfigurationError, DomainError, SubcriticalLevelError
from . import kernels
from .grids import SolverGrid

MODEL_IDS = {"power-model": kernels.MODEL_POWER, "quadratic-drift-model": kernels.MODEL_QUAD}


def _dominance_clip(comp: dict, d: int) -> None:
    """Scale off-diagonal A entries so each row is diagonally dominated."""
    if d == 1:
        return
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    offsum = [sum(np.abs(comp[f"A{min(i, k)}{max(i, k)}"]) for k in range(d) if k != i)
              for i in range(d)]
    scale = np.ones_like(comp["A00"])
    for i in range(d):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(offsum[i] > 0, comp[f"A{i}{i}"] / np.maximum(offsum[i], 1e-300), 1.0)
        scale = np.minimum(scale, s)
    scale = np.clip(scale, 0.0, 1.0)
    for i, j in pairs:
        comp[f"A{i}{j}"] = comp[f"A{i}{j}"] * scale


def _coefficient_grids(coeffs: CoefficientSet, points: np.ndarray) -> dict:
    """Sample the environment on solver nodes; returns kernel-ready arrays."""
    d = coeffs.d
    shape = points.shape[:-1]
    flat = points.reshape(-1, d)
    comp = {
        "a": np.ascontiguousarray(coeffs.field_at(coeffs.a, flat).reshape(shape)),
        "V": np.ascontiguousarray(coeffs.field_at(coeffs.V, flat).reshape(shape)),
    }
    A = coeffs.field_at(coeffs.A, flat).reshape(shape + (d, d))
    b = coeffs.field_at(coeffs.b, flat).reshape(shape + (d,))
    for i in range(d):
        for j in range(i, d):
            comp[f"A{i}{j}"] = np.ascontiguousarray(A[..., i, j])
        comp[f"b{i}"] = np.ascontiguousarray(b[..., i])
    _dominance_clip(comp, d)
    return comp


def _kernel_args(comp: dict, d: int, model: int, q: float):
    if d == 1:
        return (comp["a"], comp["V"], comp["A00"], comp["b0"], model, q)
    if d == 2:
        return (comp["a"], comp["V"], comp["A00"], comp["A01"], comp["A11"],
                comp["b0"], comp["b1"], model, q)
    return (comp["a"], comp["V"], comp["A00"], comp["A01"], comp["A02"],
            comp["A11"], comp["A12"], comp["A22"],
            comp["b0"], comp["b1"], comp["b2"], model, q)


_SWEEPS = {1: kernels.sweep_1d, 2: kernels.sweep_2d, 3: kernels.sweep_3d}


def _run_to_steady_state(d, w, status, field_args, *, eps, rhs, p_off, h,
                         origin_coords, clamp_center, periodic, cutcell,
                         alpha_floor, tol_resid, tol_update, max_cycles,
                         scale, floor, context):
    sweep = _SWEEPS[d]
    orderings = list(itertools.product((False, True), repeat=d))
    tail = (eps, rhs, *p_off, h, *origin_coords, *clamp_center,
            periodic, cutcell, alpha_floor)
    residuals = []
    sweeps_done = 0
    for _cycle in range(max_cycles):
        max_upd = 0.0
        for rev in orderings:
            upd, _, _ = sweep(w, status, *field_args, *tail, True, *rev)
            max_upd = max(max_upd, upd)
            sweeps_done += 1
        _, res, wmin = sweep(w, status, *field_args, *tail, False,
                             *orderings[0])
        residuals.append(res)
        if res < tol_resid * scale:
            return True, sweeps_done, residuals
        if max_upd < tol_update * scale:
            return True, sweeps_done, residuals
        if wmin < floor:
            raise SubcriticalLevelError(
                f"{context}: solution drifting without bound "
                f"(min {wmin:.3g} < floor {floor:.3g}); subcritical level suspected",
                residual_trace=residuals,
            )
    raise SubcriticalLevelError(
        f"{context}: no steady state after {sweeps_done} sweeps "
        f"(residual {residuals[-1]:.3g}); subcritical level suspected",
        residual_trace=residuals,
    )


def _global_bounds(coeffs: CoefficientSet):
    mask = np.ones(coeffs.V.shape, dtype=bool)
    return _bounds_on_mask(coeffs, coeffs.L, mask)


def cone_slope(coeffs: CoefficientSet, mu: float) -> float:
    """Slope beta_hi of a discrete supersolution cone for level mu.

    Solves a_R beta^q >= mu + M_R + (d-1) tr(A) beta by fixed point, then
    pads by 5 percent.  Used for the outer Dirichlet data and for divergence
    detection; correctness of the interior does not depend on its exact
    value because the boundary is outflow.
    """
    lb = _global_bounds(coeffs)
    q = coeffs.spec.q if coeffs.spec.hamiltonian == "power-model" else 2.0
    trA = float(np.trace(coeffs.A.reshape(-1, coeffs.d, coeffs.d), axis1=1, axis2=2).max())
    beta = max(0.1, ((max(mu, 0.0) + lb.M_R) / lb.a_R) ** (1.0 / q))
    for _ in range(4):
        beta = max(0.1, ((max(mu, 0.0) + lb.M_R + (coeffs.d - 1) * trA * beta)
                         / lb.a_R) ** (1.0 / q))
    return 1.05 * beta


def _alpha_floor_for(coeffs: CoefficientSet, slope_scale: float) -> float:
    spec = coeffs.spec
    if spec.hamiltonian == "power-model":
        bound = spec.q * float(coeffs.a.max()) * max(slope_scale, 1.0) ** (spec.q - 1.0)
    else:
        lam_hi = float(np.linalg.eigvalsh(coeffs.A)[..., -1].max())
        bmax = float(np.sqrt(np.sum(coeffs.b**2, axis=-1)).max())
        bound = 2.0 * lam_hi * max(slope_scale, 1.0) + bmax
    return 1e-6 * max(1.0, bound)


@dataclass(frozen=True)
class MetricField:
    """Steady solution of the metric problem on a box around its vertex."""

    grid: SolverGrid
    mu: float
    vertex: np.ndarray
    values: np.ndarray
    converged: bool
    sweeps: int
    residuals: list = field(compare=False)
    beta_hi: float = 0.0
    spec: EnvSpec | None = None
    seed: int = 0

    def interp(self, pts: np.ndarray):
        return self.grid.interp(self.values, pts)


def solve_metric(coeffs: CoefficientSet, mu: float, z, *,
                 half_width: float, h: float | None = None,
                 tol_resid: float = 1e-8, tol_update: float = 1e-10,
                 max_cycles: int = 500, init: np.ndarray | None = None) -> MetricField:
    """Maximal subsolution of the level-mu metric problem, vertex ball B_1(z).

    The box half-width must leave room for the unit ball plus an interior
    margin.  Raises SubcriticalLevelError when no steady state is reached,
    which is the expected signature of mu below the critical level.
    """
    z = np.asarray(z, dtype=float)
    h = coeffs.h if h is None else float(h)
    if z.shape != (coeffs.d,):
        raise ConfigurationError("vertex z must be a d-vector")
    if half_width < 2.0:
        raise ConfigurationError("half_width must be at least 2 (unit ball plus margin)")
    grid = SolverGrid(center=tuple(z), half_width=float(half_width), h=h,
                      boundary="dirichlet-cone")
    pts = grid.node_points()
    dist = np.sqrt(np.sum((pts - z) ** 2, axis=-1))
    status = np.zeros(grid.shape, dtype=np.uint8)
    status[dist <= 1.0 + 1e-12] = 1
    for ax in range(coeffs.d):
        sl = [slice(None)] * coeffs.d
        for edge in (0, -1):
            sl[ax] = edge
            status[tuple(sl)] = np.where(status[tuple(sl)] == 1, 1, 2)
    if not (status == 0).any():
        raise ConfigurationError("no free nodes: enlarge the box or refine h")

    beta_hi = cone_slope(coeffs, mu)
    cone = beta_hi * (dist - 1.0)
    w = cone.copy() if init is None else np.array(init, dtype=float)
    if init is not None and w.shape != grid.shape:
        raise ConfigurationError("init field shape does not match the grid")
    w[status == 1] = 0.0
    w[status == 2] = cone[status == 2]
    w = np.ascontiguousarray(w)

    comp = _coefficient_grids(coeffs, pts)
    model = MODEL_IDS[coeffs.spec.hamiltonian]
    q = coeffs.spec.q
    origin_coords = tuple(float(grid.axis_coords(ax)[0]) for ax in range(coeffs.d))
    converged, sweeps, residuals = _run_to_steady_state(
        coeffs.d, w, status, _kernel_args(comp, coeffs.d, model, q),
        eps=0.0, rhs=float(mu), p_off=(0.0,) * coeffs.d, h=h,
        origin_coords=origin_coords, clamp_center=tuple(z),
        periodic=False, cutcell=True,
        alpha_floor=_alpha_floor_for(coeffs, beta_hi),
        tol_resid=tol_resid, tol_update=tol_update, max_cycles=max_cycles,
        scale=max(1.0, abs(mu)), floor=-(2.0 + 2.0 * beta_hi),
        context=f"metric solve (mu={mu:.6g})",
    )
    return MetricField(grid=grid, mu=float(mu), vertex=z, values=w,
                       converged=converged, sweeps=sweeps, residuals=residuals,
                       beta_hi=beta_hi, spec=coeffs.spec, seed=coeffs.seed)


def tilde_m(fld: MetricField, y) -> float:
    """sup of the metric field over the closed unit ball around y."""
    y = np.asarray(y, dtype=float)
    if np.max(np.abs(y - np.asarray(fld.grid.center))) + 1.0 > fld.grid.half_width + 1e-12:
        raise DomainError("unit ball around y is not contained in the solved box")
    mask = fld.grid.ball_node_mask(y, 1.0)
    return float(fld.values[mask].max())


def oscillation(fld: MetricField, center, radius: float) -> float:
    """max - min of the field over grid nodes in a closed ball."""
    center = np.asarray(center, dtype=float)
    if np.max(np.abs(center - np.asarray(fld.grid.center))) + radius > fld.grid.half_width + 1e-12:
        raise DomainError("ball is not contained in the solved box")
    mask = fld.grid.ball_node_mask(center, radius)
    vals = fld.values[mask]
    return float(vals.max() - vals.min())


def compute_Kmu(coeffs: CoefficientSet, mu: float, y, C_cal: float = 1.0) -> float:
    """Oscillation-scale bound K_mu(y) built from radius-2 local data.

    C_cal * [ ((1+lambda1)^(1/2) * ||sigma||_{C^0,1(B_2(y))} / a_2)^(2/(q-1))
              + ((M_2 + mu) / a_2)^(1/q) ]
    """
    y = np.asarray(y, dtype=float)
    spec = coeffs.spec
    mask = _ball_mask(coeffs, 2.0, y)
    lb = _bounds_on_mask(coeffs, 2.0, mask)
    sig_sup = float(np.sqrt(np.sum(coeffs.sigma**2, axis=(-2, -1)))[mask].max())
    sig_lip = float(_edge_lipschitz(coeffs.sigma, spec.h, spec.d)[mask].max())
    signorm = sig_sup + sig_lip
    q = spec.q if spec.hamiltonian == "power-model" else 2.0
    if signorm == 0.0:
        term1 = 0.0
    elif q <= 1.0:
        raise ConfigurationError("oscillation bound needs q > 1 when sigma is nonzero")
    else:
        term1 = (np.sqrt(1.0 + spec.lambda1) * signorm / lb.a_R) ** (2.0 / (q - 1.0))
    term2 = (max(lb.M_R + mu, 0.0) / lb.a_R) ** (1.0 / q)
    return float(C_cal * (term1 + term2))


@dataclass(frozen=True)
class DiscountedField:
    """Steady solution of the discounted cell problem on the torus grid."""

    spec: EnvSpec
    seed: int
    eps: float
    p: np.ndarray
    h: float
    values: np.ndarray
    converged: bool
    sweeps: int
    residuals: list = field(compare=False)

    def at_origin(self) -> float:
        return float(self.values[(0,) * self.values.ndim])


def solve_discounted(coeffs: CoefficientSet, eps: float, p, *,
                     refine: int = 1, init: np.ndarray | None = None,
                     tol_resid: float = 1e-8,
                     tol_update: float = 1e-10, max_cycles: int = 5000) -> DiscountedField:
    """Solve eps*v - tr(A D^2 v) + H(p + Dv, y) = 0 on the periodic torus.

    The sweep map is a sup-norm contraction for any eps > 0, so an
    arbitrary ``init`` field is admissible; a good one (for instance the
    solution at a nearby discount rate, rescaled) cuts the cycle count
    substantially on diffusive environments.
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    if refine < 1 or int(refine) != refine:
        raise ConfigurationError("refine must be a positive integer")
    p = np.asarray(p, dtype=float)
    if p.shape != (coeffs.d,):
        raise ConfigurationError("p must be a d-vector")
    d = coeffs.d
    n = coeffs.spec.n_nodes * int(refine)
    h = coeffs.L / n
    ax = np.arange(n) * h
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    pts = np.stack(mesh, axis=-1)
    comp = _coefficient_grids(coeffs, pts)

    if coeffs.spec.hamiltonian == "power-model":
        Hnode = comp["a"] * np.linalg.norm(p) ** coeffs.spec.q - comp["V"]
    else:
        A = np.zeros(pts.shape[:-1] + (d, d))
        for i in range(d):
            for j in range(i, d):
                A[..., i, j] = comp[f"A{i}{j}"]
                A[..., j, i] = comp[f"A{i}{j}"]
        bvec = np.stack([comp[f"b{i}"] for i in range(d)], axis=-1)
        Hnode = np.einsum("i,...ij,j->...", p, A, p) + bvec @ p - comp["V"]
    if init is None:
        w = np.full((n,) * d, float((-Hnode).max() / eps))
    else:
        init = np.asarray(init, dtype=float)
        if init.shape != (n,) * d:
            raise ConfigurationError(
                f"init shape {init.shape} does not match solve grid {(n,) * d}")
        w = init.copy()
    status = np.zeros((n,) * d, dtype=np.uint8)

    slope_scale = float(np.linalg.norm(p)) + cone_slope(coeffs, 0.0)
    scale = max(1.0, float(np.abs(Hnode).max()))
    converged, sweeps, residuals = _run_to_steady_state(
        d, w, status, _kernel_args(comp, d, MODEL_IDS[coeffs.spec.hamiltonian], coeffs.spec.q),
        eps=float(eps), rhs=0.0, p_off=tuple(float(x) for x in p), h=h,
        origin_coords=(0.0,) * d, clamp_center=(0.0,) * d,
        periodic=True, cutcell=False,
        alpha_floor=_alpha_floor_for(coeffs, slope_scale),
        tol_resid=tol_resid, tol_update=tol_update, max_cycles=max_cycles,
        scale=scale, floor=-(abs((-Hnode).max()) / eps + scale / eps + 10.0),
        context=f"discounted solve (eps={eps:.3g})",
    )
    return DiscountedField(spec=coeffs.spec, seed=coeffs.seed, eps=float(eps),
                           p=p, h=h, values=w, converged=converged,
                           sweeps=sweeps, residuals=residuals)
