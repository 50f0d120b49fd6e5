"""Experiment orchestration: configs in, reproducible artifact trees out.

Verbs
-----
``hjhomog run <config.json>``      execute an experiment, write artifacts and
                                   a manifest; exit status reflects the
                                   declared tolerance checks.
``hjhomog report <manifest.json>`` re-summarize a finished run and emit
                                   plot-data files; nonzero exit when a check
                                   failed or an artifact is missing.
``hjhomog validate <config.json>`` parse and validate a config, print its
                                   hash.

Relative output directories are created under the directory named by the
``HJHOMOG_OUTPUT_ROOT`` environment variable (default: current directory).

Config schema (JSON object)
---------------------------
kind         one of: env-audit, metric, shape, hbar, duality, ldp,
             full-pipeline.
env          EnvSpec fields (see environment.EnvSpec).
seed         master seed for environment sampling (default: env's own seed).
output_dir   artifact directory for this run.
n_workers    worker threads for independent work items (default 1); results
             are merged by item index so outputs never depend on this.
tolerances   name -> positive number; consumed by the kind's checks:
             env-audit: diagnostic_max (optional)
             shape: ladder_drift (default 0.05)
             hbar/full-pipeline: route_gap (default 0.05),
                 convexity (default 1e-3)
             duality: biconjugate_gap (default 1e-9)
             ldp/full-pipeline: mc_pde_sigmas (default 3.0),
                 rate_rel (optional)
params       kind-specific block, see below.

Per-kind params
---------------
env-audit    alpha (default d + 1), bounds_radius (default 2.0).
metric       mu, half_width; optional h, n_rays (default 4).
shape        mus, R_ladder (sorted ascending); optional n_directions, h,
             box_margin.
hbar         mus, p_min, p_max, p_step; optional R_ladder, eps_ladder
             (sorted ascending), h, hstar_bracket [lo, hi].
duality      table_path (an hbar run's effective_table base) or the hbar
             params to build one; optional route (default: cell when the
             table carries it, else metric).
ldp          t_ladder, n_paths, dt; optional grid, tilt, sets (list of
             SetDescriptor dicts), probe (point for the MC/PDE comparison),
             hbar0 (else the flat-potential closed form is not assumed and
             the survival check is skipped).
full-pipeline  union of hbar and ldp params with small defaults.

Artifacts (CSV columns frozen per kind)
---------------------------------------
coefficients.npz/.json   sampled environment (all kinds).
env_audit.json           diagnostics (env-audit, full-pipeline).
metric_summary.json, metric_profile.csv   columns: ray, e components, R,
                         m, m_over_R.
mbar.csv                 columns: mu, e components, mbar, error.
shape.csv                columns: mu, e components, R, m_over_R.
effective_table.csv/.json, audit.json     (hbar, full-pipeline).
lagrangian.csv/.json, duality.json        (duality, full-pipeline).
rates.csv, partition.json, survival.json, hopf_cole.json   (ldp,
                         full-pipeline).
manifest.json            config hash, version, timings, seeds, artifact
                         list, check results.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import convexanalysis as cvx
from . import homogenize as hom
from . import ldp as ldpmod
from .environment import (EnvSpec, local_bounds, sample_environment,
                          save_coefficient_set, weak_coercivity_diagnostic)
from .errors import ConfigurationError, SolverError

_KINDS = ("env-audit", "metric", "shape", "hbar", "duality", "ldp",
          "full-pipeline")

_REQUIRED_PARAMS = {
    "env-audit": (),
    "metric": ("mu", "half_width"),
    "shape": ("mus", "R_ladder"),
    "hbar": ("mus", "p_min", "p_max", "p_step"),
    "duality": (),
    "ldp": ("t_ladder", "n_paths", "dt"),
    "full-pipeline": ("mus", "p_min", "p_max", "p_step", "t_ladder",
                      "n_paths", "dt"),
}

_LADDER_KEYS = ("mus", "R_ladder", "eps_ladder", "t_ladder")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; see the module docstring for keys."""

    kind: str
    env: EnvSpec
    seed: int
    output_dir: str
    n_workers: int = 1
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("config must be a JSON object")
        for key in ("kind", "env", "output_dir"):
            if key not in raw:
                raise ConfigurationError(f"config key '{key}' is required")
        kind = raw["kind"]
        if kind not in _KINDS:
            raise ConfigurationError(
                f"config key 'kind' must be one of {_KINDS}, got {kind!r}")
        try:
            env = EnvSpec.from_dict(raw["env"])
        except (TypeError, ConfigurationError) as exc:
            raise ConfigurationError(f"config key 'env' is invalid: {exc}") from exc
        seed = raw.get("seed", env.seed)
        if not isinstance(seed, int):
            raise ConfigurationError("config key 'seed' must be an integer")
        n_workers = raw.get("n_workers", 1)
        if not isinstance(n_workers, int) or n_workers < 1:
            raise ConfigurationError("config key 'n_workers' must be a positive integer")
        tolerances = raw.get("tolerances", {})
        if not isinstance(tolerances, dict):
            raise ConfigurationError("config key 'tolerances' must be an object")
        for name, val in tolerances.items():
            if not isinstance(val, (int, float)) or not val > 0:
                raise ConfigurationError(
                    f"config key 'tolerances.{name}' must be a positive number")
        params = raw.get("params", {})
        if not isinstance(params, dict):
            raise ConfigurationError("config key 'params' must be an object")
        for key in _REQUIRED_PARAMS[kind]:
            if key not in params:
                raise ConfigurationError(
                    f"config key 'params.{key}' is required for kind '{kind}'")
        if kind == "duality" and "table_path" not in params and "mus" not in params:
            raise ConfigurationError(
                "config key 'params.table_path' or 'params.mus' is required "
                "for kind 'duality'")
        for key in _LADDER_KEYS:
            if key in params:
                ladder = params[key]
                if (not isinstance(ladder, (list, tuple)) or len(ladder) == 0
                        or any(not isinstance(v, (int, float)) for v in ladder)):
                    raise ConfigurationError(
                        f"config key 'params.{key}' must be a nonempty numeric list")
                if list(ladder) != sorted(ladder):
                    raise ConfigurationError(
                        f"config key 'params.{key}' must be sorted ascending")
        extra = set(raw) - {"kind", "env", "seed", "output_dir", "n_workers",
                            "tolerances", "params"}
        if extra:
            raise ConfigurationError(
                f"config key '{sorted(extra)[0]}' is not recognized")
        return cls(kind=kind, env=env, seed=seed, output_dir=raw["output_dir"],
                   n_workers=n_workers, tolerances=dict(tolerances),
                   params=dict(params))

    def canonical_dict(self) -> dict:
        """Semantically meaningful fields only; order-independent."""
        return {
            "kind": self.kind, "env": self.env.to_dict(), "seed": self.seed,
            "tolerances": self.tolerances, "params": self.params,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


@dataclass
class RunManifest:
    """Everything needed to audit or replay a run."""

    manifest_version: int
    config_hash: str
    version: str
    kind: str
    status: str
    output_dir: str
    timings: dict
    seeds: dict
    artifacts: list
    checks: dict
    config: dict

    def all_passed(self) -> bool:
        return self.status == "ok" and all(c["passed"] for c in self.checks.values())

    def save(self, path) -> None:
        body = dataclasses.asdict(self)
        Path(path).write_text(json.dumps(body, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RunManifest":
        body = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(body) - known
        if unknown:
            raise ConfigurationError(
                f"manifest field {sorted(unknown)[0]!r} is not recognized "
                f"(manifest_version {body.get('manifest_version')})")
        return cls(**body)


def _pool_map(fn, items, n_workers: int) -> list:
    """Map over independent work items; merge results by item index."""
    items = list(items)
    if n_workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    out = [None] * len(items)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        futures = {pool.submit(fn, it): k for k, it in enumerate(items)}
        for fut, k in futures.items():
            out[k] = fut.result()
    return out


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([f"{v:.17g}" if isinstance(v, float) else str(v)
                         for v in row])


def _save_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


class _Run:
    """Mutable context threaded through the stage functions of one run."""

    def __init__(self, config: ExperimentConfig, outdir: Path):
        self.config = config
        self.outdir = outdir
        self.stage = "init"
        self.timings: dict = {}
        self.artifacts: list = []
        self.checks: dict = {}
        self.coeffs = None

    def enter(self, stage: str):
        self.stage = stage
        self._t0 = time.perf_counter()

    def leave(self):
        self.timings[self.stage] = self.timings.get(self.stage, 0.0) \
            + time.perf_counter() - self._t0

    def add_artifact(self, *paths):
        for p in paths:
            self.artifacts.append(str(Path(p).relative_to(self.outdir)))

    def check(self, name: str, value, tolerance, passed: bool):
        self.checks[name] = {
            "value": None if value is None else float(value),
            "tolerance": None if tolerance is None else float(tolerance),
            "passed": bool(passed),
        }


def _stage_sample(ctx: _Run):
    ctx.enter("sample-environment")
    ctx.coeffs = sample_environment(ctx.config.env, seed=ctx.config.seed)
    base = ctx.outdir / "coefficients"
    save_coefficient_set(ctx.coeffs, str(base))
    ctx.add_artifact(f"{base}.npz", f"{base}.json")
    ctx.leave()


def _stage_env_audit(ctx: _Run):
    ctx.enter("env-audit")
    co = ctx.coeffs
    spec = ctx.config.env
    alpha = float(ctx.config.params.get("alpha", spec.d + 1))
    radius = float(ctx.config.params.get("bounds_radius", 2.0))
    diag = weak_coercivity_diagnostic(co, alpha)
    lb = local_bounds(co, radius)
    body = {
        "alpha": alpha, "diagnostic": diag,
        "local_bounds": {"radius": lb.radius, "a_R": lb.a_R, "M_R": lb.M_R},
        "v_min": float(co.V.min()), "v_max": float(co.V.max()),
        "a_min": float(co.a.min()), "a_max": float(co.a.max()),
    }
    path = ctx.outdir / "env_audit.json"
    _save_json(path, body)
    ctx.add_artifact(path)
    tol = ctx.config.tolerances.get("diagnostic_max")
    ctx.check("coercivity_diagnostic", diag, tol,
              math.isfinite(diag) and (tol is None or diag <= tol))
    ctx.leave()


def _stage_metric(ctx: _Run):
    ctx.enter("metric-solve")
    par = ctx.config.params
    co = ctx.coeffs
    mu = float(par["mu"])
    half_width = float(par["half_width"])
    h = par.get("h")
    n_rays = int(par.get("n_rays", 4))
    fld = hom.solve_metric_cascade(co, mu, np.zeros(co.d),
                                   half_width=half_width,
                                   h=co.h if h is None else float(h),
                                   max_cycles=int(par.get("max_cycles", 2000)))
    rays = hom.sphere_directions(co.d, n_rays)
    radii = np.linspace(1.0, half_width - 1.0, 16)
    rows = []
    for k, e in enumerate(rays):
        vals = fld.interp(np.outer(radii, e))
        for R, m in zip(radii, vals):
            rows.append([k] + [float(c) for c in e]
                        + [float(R), float(m), float(m / R)])
    prof = ctx.outdir / "metric_profile.csv"
    _write_csv(prof, ["ray"] + [f"e{i}" for i in range(co.d)]
               + ["R", "m", "m_over_R"], rows)
    summ = ctx.outdir / "metric_summary.json"
    _save_json(summ, {
        "mu": mu, "converged": bool(fld.converged), "sweeps": int(fld.sweeps),
        "beta_hi": float(fld.beta_hi),
        "final_residual": float(fld.residuals[-1]) if len(fld.residuals) else None,
    })
    ctx.add_artifact(prof, summ)
    ctx.check("metric_converged", None, None, bool(fld.converged))
    ctx.leave()


def _build_mbar(ctx: _Run):
    par = ctx.config.params
    co = ctx.coeffs
    mus = [float(m) for m in par["mus"]]
    n_dir = int(par.get("n_directions", 8 if co.d > 1 else 2))
    directions = hom.sphere_directions(co.d, n_dir)
    R_ladder = [float(r) for r in par.get("R_ladder", (8.0, 16.0, 32.0, 64.0))]
    h = par.get("h")
    kwargs = dict(directions=directions, R_ladder=R_ladder,
                  h=co.h if h is None else float(h),
                  box_margin=float(par.get("box_margin", 2.0)),
                  max_cycles=int(par.get("max_cycles", 2000)))

    def one(mu):
        return hom.build_mbar_table(co, [mu], **kwargs)

    parts = _pool_map(one, mus, ctx.config.n_workers)
    table = hom.MbarTable(
        mus=np.array(mus), directions=parts[0].directions,
        values=np.vstack([p.values for p in parts]),
        errors=np.vstack([p.errors for p in parts]),
        R_ladder=parts[0].R_ladder, spec=co.spec, seed=co.seed,
        estimates=[e for p in parts for e in p.estimates])
    return table


def _stage_shape(ctx: _Run):
    ctx.enter("shape-ladders")
    table = _build_mbar(ctx)
    mpath = ctx.outdir / "mbar.csv"
    table.save_csv(mpath)
    rows = []
    for est in table.estimates:
        # ladder_values are already the per-unit readings m(R e) / R
        for R, v in zip(est.R_ladder, est.ladder_values):
            rows.append([float(est.mu)] + [float(c) for c in est.e]
                        + [float(R), float(v)])
    spath = ctx.outdir / "shape.csv"
    _write_csv(spath, ["mu"] + [f"e{i}" for i in range(table.directions.shape[1])]
               + ["R", "m_over_R"], rows)
    ctx.add_artifact(mpath, spath)
    tol = ctx.config.tolerances.get("ladder_drift", 0.05)
    worst = 0.0
    for est in table.estimates:
        v = np.asarray(est.ladder_values)
        drift = abs(v[-1] - v[-2]) / max(1.0, abs(v[-1]))
        worst = max(worst, float(drift))
    ctx.check("ladder_drift", worst, tol, worst <= tol)
    ctx.leave()
    return table


def _stage_hbar(ctx: _Run, mbar_table=None):
    par = ctx.config.params
    co = ctx.coeffs
    if mbar_table is None:
        ctx.enter("mbar-table")
        mbar_table = _build_mbar(ctx)
        mpath = ctx.outdir / "mbar.csv"
        mbar_table.save_csv(mpath)
        ctx.add_artifact(mpath)
        ctx.leave()

    ctx.enter("hstar")
    hstar = None
    if "hstar_bracket" in par:
        lo, hi = (float(v) for v in par["hstar_bracket"])
        hstar = hom.estimate_Hstar(co, (lo, hi),
                                   half_width=float(par.get("hstar_half_width", 8.0)),
                                   h=par.get("h"))
    ctx.leave()

    ctx.enter("effective-table")
    n_ax = int(round((float(par["p_max"]) - float(par["p_min"]))
                     / float(par["p_step"]))) + 1
    axis = np.linspace(float(par["p_min"]), float(par["p_max"]), n_ax)
    p_axes = (axis,) * co.d
    eps_ladder = par.get("eps_ladder", [0.25, 0.125, 0.0625])
    table = hom.build_effective_table(
        co, p_axes, mbar_table=mbar_table,
        eps_ladder=[float(e) for e in eps_ladder], hstar=hstar,
        max_cycles=int(par.get("max_cycles_cell", 20000)))
    base = ctx.outdir / "effective_table"
    table.save(base)
    ctx.add_artifact(f"{base}.csv", f"{base}.json")
    ctx.leave()

    ctx.enter("audit")
    conv_tol = ctx.config.tolerances.get("convexity", 1e-3)
    route_tol = ctx.config.tolerances.get("route_gap", 0.05)
    audit = hom.audit_effective_table(table, conv_tol=conv_tol,
                                      route_tol=route_tol)
    apath = ctx.outdir / "audit.json"
    audit.save_json(apath)
    ctx.add_artifact(apath)
    ctx.check("audit_passed", None, None, audit.passed)
    ctx.check("route_gap", audit.max_route_gap, route_tol,
              audit.max_route_gap <= route_tol)
    ctx.leave()
    return table


def _stage_duality(ctx: _Run, table=None):
    par = ctx.config.params
    if table is None:
        if "table_path" in par:
            ctx.enter("load-table")
            table = hom.load_effective_table(par["table_path"])
            ctx.leave()
        else:
            table = _stage_hbar(ctx)

    ctx.enter("legendre")
    # Prefer the cell route when present: the metric route clamps at the
    # bottom of the mu grid, so its transform understates the Lagrangian
    # near the minimum whenever Hbar(0) sits below that floor.
    default_route = "cell" if table.hbar_cell is not None else "metric"
    route = par.get("route", default_route)
    f = cvx.ConvexTable(table.p_axes, table.route(route))
    lag = cvx.legendre_transform(f, None)
    lbase = ctx.outdir / "lagrangian"
    lag.save(lbase)
    ctx.add_artifact(f"{lbase}.csv", f"{lbase}.json")

    back = cvx.biconjugate(f)
    finite = np.isfinite(f.values)
    gap = float(np.max(np.abs(back.values[finite] - f.values[finite])))
    tol = ctx.config.tolerances.get("biconjugate_gap", 1e-9)
    scale = max(1.0, float(np.max(np.abs(f.values[finite]))))
    _save_json(ctx.outdir / "duality.json", {
        "route": route, "biconjugate_gap": gap, "scale": scale,
        "lagrangian_min": float(np.min(lag.effective_values())),
    })
    ctx.add_artifact(ctx.outdir / "duality.json")
    ctx.check("biconjugate_gap", gap, tol * scale, gap <= tol * scale)
    ctx.leave()
    return lag


def _stage_ldp(ctx: _Run, lagrangian=None, hbar0=None):
    par = ctx.config.params
    co = ctx.coeffs
    tol = ctx.config.tolerances

    t_ladder = [float(t) for t in par["t_ladder"]]
    n_paths = int(par["n_paths"])
    dt = float(par["dt"])
    grid = par.get("grid")
    tilt = par.get("tilt")
    t_max = t_ladder[-1]
    probe = np.asarray(par.get("probe", np.zeros(co.d)), dtype=float)
    if hbar0 is None:
        hbar0 = par.get("hbar0")

    ctx.enter("mc-vs-pde")
    t_probe = float(par.get("probe_t", min(2.0, t_max)))
    ens_probe = ldpmod.simulate_paths(co, probe, t_probe, dt,
                                      min(n_paths, 200_000),
                                      seed=ctx.config.seed + 1)
    s_mc, s_se = ldpmod.partition_function(ens_probe)
    fld = ldpmod.pde_partition_function(co, t_probe, grid)
    s_pde = float(fld.interp(probe))
    sig = tol.get("mc_pde_sigmas", 3.0)
    gap_mc = abs(s_mc - s_pde)
    _save_json(ctx.outdir / "partition.json", {
        "t": t_probe, "probe": probe.tolist(), "mc_value": s_mc,
        "mc_stderr": s_se, "pde_value": s_pde,
    })
    ctx.add_artifact(ctx.outdir / "partition.json")
    ctx.check("mc_vs_pde", gap_mc, sig * s_se + 1e-3,
              gap_mc <= sig * s_se + 1e-3)
    ctx.leave()

    ctx.enter("hopf-cole")
    delta = float(par.get("snapshot_delta", 0.05))
    fld3 = ldpmod.pde_partition_function(
        co, t_probe, grid,
        snapshot_times=(t_probe - 2 * delta, t_probe - delta, t_probe))
    rep = ldpmod.hopf_cole_residual(fld3, co)
    _save_json(ctx.outdir / "hopf_cole.json", rep.to_dict())
    ctx.add_artifact(ctx.outdir / "hopf_cole.json")
    ctx.leave()

    if hbar0 is not None:
        ctx.enter("survival")
        x_surv = np.asarray(par.get("survival_x", np.zeros(co.d)), dtype=float)
        srep = ldpmod.survival_rate_check(co, x_surv, t_ladder, float(hbar0),
                                          grid=grid)
        srep.save_json(ctx.outdir / "survival.json")
        ctx.add_artifact(ctx.outdir / "survival.json")
        ctx.check("survival_gap_decreasing", srep.gaps[-1], None,
                  srep.gap_decreasing)
        ctx.leave()

    ctx.enter("rates")
    sets = par.get("sets")
    if sets is None:
        descriptors = [ldpmod.SetDescriptor(kind="ball-complement",
                                            center=(0.0,) * co.d, radius=1.0)]
    else:
        descriptors = [ldpmod.SetDescriptor(**s) for s in sets]
    x_start = np.zeros(co.d)

    def one_t(t):
        ens = ldpmod.simulate_paths(co, x_start * t, t, dt, n_paths,
                                    seed=ctx.config.seed + 2, tilt=tilt)
        out = []
        for K in descriptors:
            pred = math.nan
            if lagrangian is not None and hbar0 is not None:
                pred = ldpmod.ldp_prediction(lagrangian, float(hbar0), K,
                                             x=x_start)
            out.append(ldpmod.empirical_rate(ens, K, x_start, prediction=pred))
        return out

    per_t = _pool_map(one_t, t_ladder, ctx.config.n_workers)
    rates = [est for grp in per_t for est in grp]
    rpath = ctx.outdir / "rates.csv"
    ldpmod.save_rates_csv(rates, rpath)
    ctx.add_artifact(rpath)
    if "rate_rel" in tol:
        last = per_t[-1]
        ok = True
        worst = 0.0
        for est in last:
            if math.isfinite(est.prediction) and not est.zero_hits:
                rel = abs(est.value - est.prediction) / max(1.0, abs(est.prediction))
                worst = max(worst, rel)
                ok = ok and rel <= tol["rate_rel"]
        ctx.check("rate_vs_prediction", worst, tol["rate_rel"], ok)
    ctx.leave()
    return rates


def run(config: ExperimentConfig) -> RunManifest:
    """Execute one experiment; always writes manifest.json in output_dir."""
    root = Path(os.environ.get("HJHOMOG_OUTPUT_ROOT", "."))
    outdir = Path(config.output_dir)
    if not outdir.is_absolute():
        outdir = root / outdir
    outdir.mkdir(parents=True, exist_ok=True)

    ctx = _Run(config, outdir)
    status = "ok"
    try:
        _stage_sample(ctx)
        kind = config.kind
        if kind == "env-audit":
            _stage_env_audit(ctx)
        elif kind == "metric":
            _stage_metric(ctx)
        elif kind == "shape":
            _stage_shape(ctx)
        elif kind == "hbar":
            _stage_hbar(ctx)
        elif kind == "duality":
            _stage_duality(ctx)
        elif kind == "ldp":
            _stage_ldp(ctx)
        elif kind == "full-pipeline":
            _stage_env_audit(ctx)
            table = _stage_hbar(ctx)
            lag = _stage_duality(ctx, table=table)
            hbar0 = float(table.route("cell").reshape(-1)[_center_index(table)])
            _stage_ldp(ctx, lagrangian=lag, hbar0=hbar0)
    except (SolverError, ConfigurationError, ValueError) as exc:
        status = f"failed:{ctx.stage}: {exc}"

    manifest = RunManifest(
        manifest_version=1, config_hash=config.config_hash(),
        version=__version__, kind=config.kind, status=status,
        output_dir=str(outdir), timings=ctx.timings,
        seeds={"master": config.seed, "environment": config.env.seed},
        artifacts=sorted(ctx.artifacts), checks=ctx.checks,
        config=config.canonical_dict(),
    )
    manifest.save(outdir / "manifest.json")
    return manifest


def _center_index(table) -> int:
    shape = table.lattice_shape
    idx = tuple(int(np.argmin(np.abs(ax))) for ax in table.p_axes)
    return int(np.ravel_multi_index(idx, shape))


def _read_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = list(rd)
    return header, rows


def report(manifest_path, out=None) -> int:
    """Summarize a run and emit plot-data files; returns an exit code."""
    out = sys.stdout if out is None else out
    manifest = RunManifest.load(manifest_path)
    outdir = Path(manifest.output_dir)
    missing = [a for a in manifest.artifacts if not (outdir / a).exists()]
    if missing:
        print("missing artifacts:", file=out)
        for a in missing:
            print(f"  {a}", file=out)
        return 2

    plots = outdir / "plots"
    plots.mkdir(exist_ok=True)
    made = []
    if (outdir / "shape.csv").exists():
        header, rows = _read_csv(outdir / "shape.csv")
        d = len(header) - 3
        groups: dict = {}
        for row in rows:
            key = tuple(row[:1 + d])
            groups.setdefault(key, []).append((float(row[1 + d]), float(row[2 + d])))
        for k, (key, pts) in enumerate(sorted(groups.items())):
            path = plots / f"shape_{k:02d}.dat"
            with open(path, "w") as fh:
                fh.write(f"# mu={key[0]} e=({', '.join(key[1:])}); columns: R m_over_R\n")
                for R, v in pts:
                    fh.write(f"{R:.17g} {v:.17g}\n")
            made.append(path)
    if (outdir / "effective_table.csv").exists():
        header, rows = _read_csv(outdir / "effective_table.csv")
        d = sum(1 for name in header if name.startswith("p"))
        for route in ("hbar_metric", "hbar_cell"):
            if route not in header:
                continue
            col = header.index(route)
            axis_rows = []
            for row in rows:
                p = [float(row[i]) for i in range(d)]
                if all(abs(c) < 1e-15 for c in p[1:]) and row[col]:
                    axis_rows.append((p[0], float(row[col])))
            path = plots / f"{route}_axis0.dat"
            with open(path, "w") as fh:
                fh.write(f"# columns: p0 {route} (other components zero)\n")
                for p0, v in sorted(axis_rows):
                    fh.write(f"{p0:.17g} {v:.17g}\n")
            made.append(path)
    if (outdir / "rates.csv").exists():
        header, rows = _read_csv(outdir / "rates.csv")
        it, iv, ip = (header.index(k) for k in ("t", "value", "prediction"))
        path = plots / "rate_vs_t.dat"
        with open(path, "w") as fh:
            fh.write("# columns: t empirical_rate prediction\n")
            for row in sorted(rows, key=lambda r: float(r[it])):
                fh.write(f"{float(row[it]):.17g} {row[iv]} {row[ip]}\n")
        made.append(path)

    print(f"kind: {manifest.kind}  status: {manifest.status}", file=out)
    print(f"config hash: {manifest.config_hash}", file=out)
    failed = []
    for name, chk in sorted(manifest.checks.items()):
        state = "PASS" if chk["passed"] else "FAIL"
        val = "" if chk["value"] is None else f" value={chk['value']:.6g}"
        tolc = "" if chk["tolerance"] is None else f" tol={chk['tolerance']:.6g}"
        print(f"[{state}] {name}{val}{tolc}", file=out)
        if not chk["passed"]:
            failed.append(name)
    for p in made:
        print(f"plot-data: {p}", file=out)
    if manifest.status != "ok":
        print(f"run did not complete: {manifest.status}", file=out)
        return 1
    if failed:
        print("failed checks: " + ", ".join(failed), file=out)
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hjhomog",
        description="homogenization and large-deviation experiment runner")
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_rep = sub.add_parser("report", help="summarize a finished run")
    p_rep.add_argument("manifest", help="path to a run's manifest.json")
    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("config", help="path to a JSON experiment config")
    args = parser.parse_args(argv)

    if args.verb == "validate":
        try:
            config = load_config(args.config)
        except (ConfigurationError, OSError) as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return 2
        print(f"valid config for kind '{config.kind}'")
        print(f"config hash: {config.config_hash()}")
        return 0
    if args.verb == "run":
        try:
            config = load_config(args.config)
        except (ConfigurationError, OSError) as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return 2
        manifest = run(config)
        print(f"manifest: {Path(manifest.output_dir) / 'manifest.json'}")
        for name, chk in sorted(manifest.checks.items()):
            state = "PASS" if chk["passed"] else "FAIL"
            print(f"[{state}] {name}")
        if manifest.status != "ok":
            print(f"run failed at stage: {manifest.status}", file=sys.stderr)
            return 1
        return 0 if manifest.all_passed() else 1
    try:
        return report(args.manifest)
    except (ConfigurationError, OSError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
