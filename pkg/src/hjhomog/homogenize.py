"""Effective Hamiltonian estimation by two independent routes.

The metric route solves the level-mu metric problem on large boxes, reads
the rescaled values m_mu(Re, 0)/R along a ladder of radii, extrapolates the
effective metric slope mbar_mu(e), and inverts the family of level sets:

    Hbar(p) = inf { mu : mbar_mu(e) >= p.e for every unit e }.

The cell route solves the discounted corrector problem for a ladder of
discount rates and extrapolates -eps v_eps(0) -> Hbar(p).  The two routes
share no numerics beyond the sweep kernels and are cross-checked by the
table audit, together with convexity, the growth envelope, and the critical
value from convergence bisection.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .environment import CoefficientSet, EnvSpec, evaluate_H
from .errors import ConfigurationError, DomainError, SubcriticalLevelError
from .hjsolver import SolverGrid, solve_metric, solve_discounted
from .hjsolver.stationary import MetricField

_DEF_LADDER = (8.0, 16.0, 32.0, 64.0)


def _fit_affine(x: np.ndarray, y: np.ndarray):
    """Least-squares fit y ~ c + c1*x; returns (c, c1, rms residual)."""
    design = np.column_stack([np.ones_like(x), x])
    sol, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ sol
    return float(sol[0]), float(sol[1]), float(np.sqrt(np.mean(resid**2)))


def solve_metric_cascade(coeffs: CoefficientSet, mu: float, z, *,
                         half_width: float, h: float,
                         coarse_factors=(8, 4, 2), **solver_kwargs) -> MetricField:
    """solve_metric warm-started through a coarse-to-fine grid cascade.

    Factors whose spacing does not divide the box are skipped.  The final
    answer satisfies the same steady-state tolerances as a direct solve;
    the cascade only shortens the path to it.
    """
    z = np.asarray(z, dtype=float)
    fld = None
    levels = [h * f for f in sorted(coarse_factors, reverse=True) if f > 1]
    for hh in levels + [h]:
        m = half_width / hh
        if abs(m - round(m)) > 1e-9:
            continue
        init = None
        if fld is not None:
            grid = SolverGrid(center=tuple(z), half_width=float(half_width),
                              h=hh, boundary="dirichlet-cone")
            init = fld.interp(grid.node_points())
        fld = solve_metric(coeffs, mu, z, half_width=half_width, h=hh,
                           init=init, **solver_kwargs)
    if fld is None or fld.grid.h != h:
        raise ConfigurationError("half_width must be an integer multiple of h")
    return fld


@dataclass(frozen=True)
class MbarEstimate:
    """Ladder estimate of the effective metric slope in one direction."""

    mu: float
    e: np.ndarray
    R_ladder: np.ndarray
    ladder_values: np.ndarray
    value: float
    error: float
    seeds: tuple = ()

    def pairwise_limits(self) -> np.ndarray:
        """1/R-extrapolants from consecutive ladder pairs (audit trail)."""
        R, v = self.R_ladder, self.ladder_values
        return (R[1:] * v[1:] - R[:-1] * v[:-1]) / (R[1:] - R[:-1])


def _ladder_fit(R: np.ndarray, vals: np.ndarray):
    # fit c + c'/R over the ladder tail; the error bar is the spread of the
    # consecutive-pair extrapolants in the tail, which collapses to zero
    # exactly when the data follow the fitted law
    k = min(3, len(R))
    c, _, rms = _fit_affine(1.0 / R[-k:], vals[-k:])
    pair = (R[1:] * vals[1:] - R[:-1] * vals[:-1]) / (R[1:] - R[:-1])
    tail = pair[-max(1, min(2, len(pair))):]
    err = max(float(np.max(np.abs(tail - c))), rms)
    return c, err


def _read_ladder(fld: MetricField, z: np.ndarray, e: np.ndarray,
                 R_ladder: np.ndarray) -> np.ndarray:
    pts = z[None, :] + R_ladder[:, None] * e[None, :]
    return fld.interp(pts) / R_ladder


def estimate_mbar(coeffs: CoefficientSet, mu: float, e, R_ladder=_DEF_LADDER,
                  *, h: float | None = None, box_margin: float = 2.0,
                  cascade: bool = True, **solver_kwargs) -> MbarEstimate:
    """Estimate mbar_mu(e) from one metric solve on a ladder-sized box.

    The box half-width is max(R) + box_margin so every read is interior.
    Raises the solver's subcritical error unchanged when mu is below the
    critical level.
    """
    e = np.asarray(e, dtype=float)
    nrm = float(np.linalg.norm(e))
    if nrm < 1e-12:
        raise ConfigurationError("direction e must be nonzero")
    e = e / nrm
    R_ladder = np.asarray(sorted(R_ladder), dtype=float)
    if len(R_ladder) < 2:
        raise ConfigurationError("need at least two ladder radii")
    h = coeffs.h if h is None else float(h)
    half_width = float(R_ladder[-1] + box_margin)
    z = np.zeros(coeffs.d)
    if cascade:
        fld = solve_metric_cascade(coeffs, mu, z, half_width=half_width, h=h,
                                   **solver_kwargs)
    else:
        fld = solve_metric(coeffs, mu, z, half_width=half_width, h=h,
                           **solver_kwargs)
    vals = _read_ladder(fld, z, e, R_ladder)
    value, err = _ladder_fit(R_ladder, vals)
    return MbarEstimate(mu=float(mu), e=e, R_ladder=R_ladder,
                        ladder_values=vals, value=value, error=err,
                        seeds=(coeffs.seed,))


def sphere_directions(d: int, n: int) -> np.ndarray:
    """n roughly equidistributed unit vectors (exactly 2 endpoints for d=1)."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(th), np.sin(th)])
    if d == 3:
        # Fibonacci lattice on the sphere
        k = np.arange(n) + 0.5
        phi = np.pi * (1.0 + np.sqrt(5.0)) * k
        cz = 1.0 - 2.0 * k / n
        sz = np.sqrt(np.maximum(0.0, 1.0 - cz**2))
        return np.column_stack([sz * np.cos(phi), sz * np.sin(phi), cz])
    raise ConfigurationError("d must be 1, 2, or 3")


@dataclass(frozen=True)
class MbarTable:
    """mbar_mu(e) on a (mu grid) x (direction set) lattice."""

    mus: np.ndarray
    directions: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    R_ladder: np.ndarray
    spec: EnvSpec | None = None
    seed: int = 0
    estimates: list = field(default_factory=list, compare=False)

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            d = self.directions.shape[1]
            wr.writerow(["mu"] + [f"e{i}" for i in range(d)]
                        + ["mbar", "error"])
            for i, mu in enumerate(self.mus):
                for j in range(self.directions.shape[0]):
                    wr.writerow([f"{mu:.17g}"]
                                + [f"{c:.17g}" for c in self.directions[j]]
                                + [f"{self.values[i, j]:.17g}",
                                   f"{self.errors[i, j]:.17g}"])


def build_mbar_table(coeffs: CoefficientSet, mus, directions=None,
                     R_ladder=_DEF_LADDER, *, h: float | None = None,
                     box_margin: float = 2.0, cascade: bool = True,
                     **solver_kwargs) -> MbarTable:
    """One metric solve per mu feeds every direction and ladder radius."""
    mus = np.asarray(sorted(mus), dtype=float)
    if directions is None:
        directions = sphere_directions(coeffs.d, 16 if coeffs.d == 2 else 60)
    directions = np.asarray(directions, dtype=float)
    directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    R_ladder = np.asarray(sorted(R_ladder), dtype=float)
    h = coeffs.h if h is None else float(h)
    half_width = float(R_ladder[-1] + box_margin)
    z = np.zeros(coeffs.d)

    values = np.zeros((len(mus), len(directions)))
    errors = np.zeros_like(values)
    estimates = []
    for i, mu in enumerate(mus):
        if cascade:
            fld = solve_metric_cascade(coeffs, float(mu), z,
                                       half_width=half_width, h=h,
                                       **solver_kwargs)
        else:
            fld = solve_metric(coeffs, float(mu), z, half_width=half_width,
                               h=h, **solver_kwargs)
        for j, e in enumerate(directions):
            vals = _read_ladder(fld, z, e, R_ladder)
            c, err = _ladder_fit(R_ladder, vals)
            values[i, j] = c
            errors[i, j] = err
            estimates.append(MbarEstimate(mu=float(mu), e=e, R_ladder=R_ladder,
                                          ladder_values=vals, value=c,
                                          error=err, seeds=(coeffs.seed,)))
    return MbarTable(mus=mus, directions=directions, values=values,
                     errors=errors, R_ladder=R_ladder, spec=coeffs.spec,
                     seed=coeffs.seed, estimates=estimates)


def estimate_Hbar_metric(table: MbarTable, p) -> float:
    """Invert the mbar table: smallest level supporting the momentum p.

    Linear interpolation on the deficit min_e(mbar_mu(e) - p.e) between the
    bracketing grid levels; the grid floor is returned when even the lowest
    level supports p (notably p = 0).
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (table.directions.shape[1],):
        raise ConfigurationError("p must match the table dimension")
    deficit = np.min(table.values - table.directions @ p, axis=1)
    ok = deficit >= 0.0
    if not ok.any():
        raise DomainError(
            "no admissible level on the mu grid (grid-range): extend the grid")
    k = int(np.argmax(ok))
    if k == 0:
        return float(table.mus[0])
    g0, g1 = deficit[k - 1], deficit[k]
    t = -g0 / (g1 - g0)
    return float(table.mus[k - 1] + t * (table.mus[k] - table.mus[k - 1]))


@dataclass(frozen=True)
class HstarEstimate:
    """Critical level from bisection on metric-solver convergence."""

    value: float
    lo: float
    hi: float
    iterations: int
    probes: tuple = ()

    @property
    def width(self) -> float:
        return self.hi - self.lo


def _metric_converges(coeffs, mu, *, half_width, h, max_cycles) -> bool:
    try:
        solve_metric(coeffs, mu, np.zeros(coeffs.d), half_width=half_width,
                     h=h, max_cycles=max_cycles)
        return True
    except SubcriticalLevelError:
        return False


def estimate_Hstar(coeffs: CoefficientSet, mu_bracket, *, tol: float = 1e-2,
                   half_width: float = 8.0, h: float | None = None,
                   max_cycles: int = 200) -> HstarEstimate:
    """Bisect the onset of metric-solver convergence inside mu_bracket.

    The bracket must straddle the transition: the low end fails to reach a
    steady state, the high end converges.  Near-critical slow convergence
    counts as failure, so the returned bracket is a conservative enclosure
    at the configured cycle budget.
    """
    lo, hi = (float(mu_bracket[0]), float(mu_bracket[1]))
    if not lo < hi:
        raise ConfigurationError("mu_bracket must be an increasing pair")
    h = coeffs.h if h is None else float(h)
    probes = []
    if _metric_converges(coeffs, lo, half_width=half_width, h=h,
                         max_cycles=max_cycles):
        raise DomainError("bracket low end already converges: no sign change")
    probes.append((lo, False))
    if not _metric_converges(coeffs, hi, half_width=half_width, h=h,
                             max_cycles=max_cycles):
        raise DomainError("bracket high end does not converge: no sign change")
    probes.append((hi, True))
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        good = _metric_converges(coeffs, mid, half_width=half_width, h=h,
                                 max_cycles=max_cycles)
        probes.append((mid, good))
        if good:
            hi = mid
        else:
            lo = mid
        it += 1
    return HstarEstimate(value=0.5 * (lo + hi), lo=lo, hi=hi, iterations=it,
                         probes=tuple(probes))


@dataclass(frozen=True)
class CellEstimate:
    """Discount ladder readout -eps v_eps(0) with its affine-in-eps limit."""

    p: np.ndarray
    eps_ladder: np.ndarray
    readings: np.ndarray
    value: float
    error: float


def cell_ladder(coeffs: CoefficientSet, p, eps_ladder, *, refine: int = 1,
                **solver_kwargs) -> CellEstimate:
    p = np.asarray(p, dtype=float)
    eps_ladder = np.asarray(sorted(eps_ladder, reverse=True), dtype=float)
    if len(eps_ladder) < 2:
        raise ConfigurationError("need at least two discount rates")
    readings = []
    prev = None
    for eps in eps_ladder:
        # eps * v_eps is nearly eps-independent, so the previous rung
        # rescaled by the discount ratio is an excellent initial guess.
        init = None if prev is None else prev.values * (prev.eps / eps)
        prev = solve_discounted(coeffs, float(eps), p, refine=refine,
                                init=init, **solver_kwargs)
        readings.append(-eps * prev.at_origin())
    readings = np.asarray(readings)
    c, _, rms = _fit_affine(eps_ladder, readings)
    pair = ((readings[:-1] * eps_ladder[1:] - readings[1:] * eps_ladder[:-1])
            / (eps_ladder[1:] - eps_ladder[:-1]))
    err = max(float(np.max(np.abs(pair[-2:] - c))), rms)
    return CellEstimate(p=p, eps_ladder=eps_ladder, readings=readings,
                        value=c, error=err)


def estimate_Hbar_cell(coeffs: CoefficientSet, p, eps_ladder, *,
                       refine: int = 1, **solver_kwargs) -> float:
    """Cell-route effective Hamiltonian: extrapolated -eps v_eps(0)."""
    return cell_ladder(coeffs, p, eps_ladder, refine=refine,
                       **solver_kwargs).value


def minmax_upper_bound(coeffs: CoefficientSet, p, w: np.ndarray) -> float:
    """Certified grid upper bound sup_y [-tr(A D2 w) + H(p + Dw, y)].

    w is a periodic node field on the environment torus (any cubic
    resolution).  The gradient ranges over the one-sided difference box,
    whose maximum sits at a corner because H is convex in p, and the
    diffusion part uses centered stencils.
    """
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    d = coeffs.d
    if w.ndim != d:
        raise ConfigurationError("w must be a d-dimensional node field")
    n = w.shape[0]
    if w.shape != (n,) * d:
        raise ConfigurationError("w must be cubic")
    hw = coeffs.L / n
    ax_pts = np.arange(n) * hw
    mesh = np.meshgrid(*([ax_pts] * d), indexing="ij")
    pts = np.stack(mesh, axis=-1)

    fwd = [(np.roll(w, -1, axis=ax) - w) / hw for ax in range(d)]
    bwd = [(w - np.roll(w, 1, axis=ax)) / hw for ax in range(d)]

    # centered tr(A D^2 w) with four-corner cross terms
    A = coeffs.field_at(coeffs.A, pts)
    diffusion = np.zeros_like(w)
    for i in range(d):
        dii = (np.roll(w, -1, axis=i) - 2.0 * w + np.roll(w, 1, axis=i)) / hw**2
        diffusion += A[..., i, i] * dii
        for j in range(i + 1, d):
            wpp = np.roll(np.roll(w, -1, axis=i), -1, axis=j)
            wmm = np.roll(np.roll(w, 1, axis=i), 1, axis=j)
            wpm = np.roll(np.roll(w, -1, axis=i), 1, axis=j)
            wmp = np.roll(np.roll(w, 1, axis=i), -1, axis=j)
            dij = (wpp + wmm - wpm - wmp) / (4.0 * hw**2)
            diffusion += 2.0 * A[..., i, j] * dij

    best = np.full(w.shape, -np.inf)
    for mask in range(1 << d):
        grad = np.stack([(fwd[ax] if (mask >> ax) & 1 else bwd[ax])
                         for ax in range(d)], axis=-1)
        best = np.maximum(best, evaluate_H(coeffs, p + grad, pts))
    return float(np.max(best - diffusion))


@dataclass(frozen=True)
class EffectiveTable:
    """Map p -> Hbar(p) on a momentum lattice, one column per route."""

    p_axes: tuple
    hbar_metric: np.ndarray | None
    err_metric: np.ndarray | None
    hbar_cell: np.ndarray | None
    err_cell: np.ndarray | None
    hstar: HstarEstimate | None = None
    spec: EnvSpec | None = None
    seed: int = 0

    @property
    def d(self) -> int:
        return len(self.p_axes)

    @property
    def lattice_shape(self) -> tuple:
        return tuple(len(ax) for ax in self.p_axes)

    def momenta(self) -> np.ndarray:
        mesh = np.meshgrid(*self.p_axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def route(self, name: str) -> np.ndarray:
        if name == "metric" and self.hbar_metric is not None:
            return self.hbar_metric
        if name == "cell" and self.hbar_cell is not None:
            return self.hbar_cell
        raise ConfigurationError(f"route {name!r} not populated")

    def save(self, base) -> tuple[Path, Path]:
        """Write <base>.csv (lattice rows) and <base>.json (provenance)."""
        base = Path(base)
        csv_path = base.with_suffix(".csv")
        P = self.momenta().reshape(-1, self.d)
        cols = {}
        for name, arr in (("hbar_metric", self.hbar_metric),
                          ("err_metric", self.err_metric),
                          ("hbar_cell", self.hbar_cell),
                          ("err_cell", self.err_cell)):
            cols[name] = None if arr is None else arr.reshape(-1)
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"p{i}" for i in range(self.d)] + list(cols))
            for k in range(P.shape[0]):
                row = [f"{c:.17g}" for c in P[k]]
                row += ["" if v is None else f"{v[k]:.17g}"
                        for v in cols.values()]
                wr.writerow(row)
        meta = {
            "p_axes": [list(map(float, ax)) for ax in self.p_axes],
            "hstar": None if self.hstar is None else {
                "value": self.hstar.value, "lo": self.hstar.lo,
                "hi": self.hstar.hi, "iterations": self.hstar.iterations},
            "spec": None if self.spec is None else self.spec.to_dict(),
            "seed": self.seed,
        }
        json_path = base.with_suffix(".json")
        json_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
        return csv_path, json_path


def load_effective_table(base) -> EffectiveTable:
    base = Path(base)
    meta = json.loads(base.with_suffix(".json").read_text())
    p_axes = tuple(np.asarray(ax, dtype=float) for ax in meta["p_axes"])
    shape = tuple(len(ax) for ax in p_axes)
    cols: dict[str, list] = {}
    with open(base.with_suffix(".csv"), newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        names = header[len(p_axes):]
        for name in names:
            cols[name] = []
        for row in rd:
            for name, cell in zip(names, row[len(p_axes):]):
                cols[name].append(np.nan if cell == "" else float(cell))

    def arr(name):
        vals = np.asarray(cols[name], dtype=float).reshape(shape)
        return None if np.isnan(vals).all() else vals

    hs = meta["hstar"]
    hstar = None if hs is None else HstarEstimate(
        value=hs["value"], lo=hs["lo"], hi=hs["hi"],
        iterations=hs["iterations"])
    spec = None if meta["spec"] is None else EnvSpec.from_dict(meta["spec"])
    return EffectiveTable(p_axes=p_axes, hbar_metric=arr("hbar_metric"),
                          err_metric=arr("err_metric"),
                          hbar_cell=arr("hbar_cell"), err_cell=arr("err_cell"),
                          hstar=hstar, spec=spec, seed=meta["seed"])


def support_function(table: EffectiveTable, mu: float, y,
                     route: str = "metric") -> float:
    """Discrete support function sup{p.y : Hbar(p) <= mu} over the lattice."""
    y = np.asarray(y, dtype=float)
    vals = table.route(route)
    mask = vals <= mu + 1e-12
    if not mask.any():
        raise DomainError("empty sublevel set at this level")
    P = table.momenta()[mask]
    return float(np.max(P @ y))


def build_effective_table(coeffs: CoefficientSet, p_axes, *,
                          mbar_table: MbarTable | None = None,
                          eps_ladder=None, hstar: HstarEstimate | None = None,
                          refine: int = 1, **solver_kwargs) -> EffectiveTable:
    """Assemble an EffectiveTable from whichever routes were requested."""
    p_axes = tuple(np.asarray(ax, dtype=float) for ax in p_axes)
    shape = tuple(len(ax) for ax in p_axes)
    mesh = np.meshgrid(*p_axes, indexing="ij")
    P = np.stack(mesh, axis=-1).reshape(-1, len(p_axes))

    hbar_metric = err_metric = hbar_cell = err_cell = None
    if mbar_table is not None:
        vals = np.array([estimate_Hbar_metric(mbar_table, p) for p in P])
        hbar_metric = vals.reshape(shape)
        step = np.diff(mbar_table.mus).max(initial=0.0)
        err_metric = np.full(shape, 0.5 * step + float(mbar_table.errors.max()))
    if eps_ladder is not None:
        est = [cell_ladder(coeffs, p, eps_ladder, refine=refine,
                           **solver_kwargs) for p in P]
        hbar_cell = np.array([e.value for e in est]).reshape(shape)
        err_cell = np.array([e.error for e in est]).reshape(shape)
    return EffectiveTable(p_axes=p_axes, hbar_metric=hbar_metric,
                          err_metric=err_metric, hbar_cell=hbar_cell,
                          err_cell=err_cell, hstar=hstar, spec=coeffs.spec,
                          seed=coeffs.seed)


@dataclass(frozen=True)
class AuditReport:
    """Structural checks of an EffectiveTable (report-only, never raises)."""

    scale: float
    convexity_violations: tuple
    worst_second_difference: float
    bound_violations: tuple
    max_route_gap: float
    route_gap_count: int
    min_table: float
    hstar_value: float | None
    hstar_gap: float | None
    passed: bool

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "convexity_violations": [list(v) for v in self.convexity_violations],
            "worst_second_difference": self.worst_second_difference,
            "bound_violations": [list(v) for v in self.bound_violations],
            "max_route_gap": self.max_route_gap,
            "route_gap_count": self.route_gap_count,
            "min_table": self.min_table,
            "hstar_value": self.hstar_value,
            "hstar_gap": self.hstar_gap,
            "passed": self.passed,
        }

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2,
                                         sort_keys=True))


def audit_effective_table(table: EffectiveTable, *, conv_tol: float = 1e-3,
                          route_tol: float | None = None,
                          bound_slack: float | None = None) -> AuditReport:
    """Check convexity, growth bounds, route agreement, and the minimum.

    conv_tol scales with max(1, sup |Hbar|); the growth bound uses the
    environment constants recorded in the table's provenance.  Violations
    are reported entry by entry so a single corrupted value is locatable.
    """
    routes = [(n, table.route(n)) for n in ("metric", "cell")
              if (table.hbar_metric if n == "metric" else table.hbar_cell)
              is not None]
    if not routes:
        raise ConfigurationError("table has no populated route")
    scale = max(1.0, max(float(np.max(np.abs(v))) for _, v in routes))
    tol = conv_tol * scale

    conv_violations = []
    worst = np.inf
    for name, vals in routes:
        for ax in range(table.d):
            second = (np.diff(vals, 2, axis=ax))
            worst = min(worst, float(second.min(initial=np.inf)))
            bad = np.argwhere(second < -tol)
            for idx in bad:
                conv_violations.append((name, ax, tuple(int(i) for i in idx),
                                        float(second[tuple(idx)])))

    bound_violations = []
    if table.spec is not None:
        q = table.spec.q if table.spec.hamiltonian == "power-model" else 2.0
        lam1 = table.spec.lambda1
        P = table.momenta()
        upper = lam1 * (np.linalg.norm(P, axis=-1) ** q + 1.0)
        slack = tol if bound_slack is None else bound_slack
        for name, vals in routes:
            err = (table.err_metric if name == "metric" else table.err_cell)
            err = np.zeros_like(vals) if err is None else err
            over = vals - upper - err - slack
            for idx in np.argwhere(over > 0):
                bound_violations.append((name, "upper",
                                         tuple(int(i) for i in idx),
                                         float(over[tuple(idx)])))
            if table.hstar is not None:
                under = (table.hstar.lo - table.hstar.width) - vals - err - slack
                for idx in np.argwhere(under > 0):
                    bound_violations.append((name, "lower",
                                             tuple(int(i) for i in idx),
                                             float(under[tuple(idx)])))

    max_gap = 0.0
    gap_count = 0
    if len(routes) == 2:
        gap = np.abs(routes[0][1] - routes[1][1])
        max_gap = float(gap.max())
        rtol = route_tol if route_tol is not None else np.inf
        gap_count = int(np.sum(gap > rtol))

    min_table = min(float(v.min()) for _, v in routes)
    hstar_value = None if table.hstar is None else table.hstar.value
    hstar_gap = None
    if table.hstar is not None:
        hstar_gap = float(abs(min_table - table.hstar.value))

    passed = (not conv_violations and not bound_violations
              and (route_tol is None or gap_count == 0)
              and (hstar_gap is None
                   or hstar_gap <= max(table.hstar.width, tol)))
    return AuditReport(scale=scale,
                       convexity_violations=tuple(conv_violations),
                       worst_second_difference=worst,
                       bound_violations=tuple(bound_violations),
                       max_route_gap=max_gap, route_gap_count=gap_count,
                       min_table=min_table, hstar_value=hstar_value,
                       hstar_gap=hstar_gap, passed=passed)
