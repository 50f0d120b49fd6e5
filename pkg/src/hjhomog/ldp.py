"""Large-deviation experiments for diffusions in a random potential.

Two independent routes to the survival functional

    S(t, x) = E_x[ exp(-int_0^t V(X_s) ds) ],    dX = b(X) dt + sigma(X) dB,

are provided: weighted Monte Carlo over Euler-Maruyama paths (with an
optional exponential drift tilt whose Radon-Nikodym correction keeps the
estimator unbiased), and a monotone explicit march of the linear parabolic
equation S_t = tr(A D^2 S) + b.DS - V S on the periodicity cell.  The
logarithm of S recovers the effective Hamiltonian at zero momentum, and
normalized path measures obey a large deviation principle whose rate
function is the effective Lagrangian; `ldp_prediction` and `empirical_rate`
compare the two sides on ball / half-space target sets.

Positions are advanced in free space; only coefficient lookups wrap through
the torus.  Path batches draw from counter-based streams keyed by
(seed, chunk index) with a fixed chunk size, so ensembles are bit-identical
for a given (seed, n_paths, dt) regardless of how work is scheduled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .environment import CoefficientSet, EnvSpec, _rng
from .errors import ConfigurationError, DomainError
from .hjsolver.stationary import _coefficient_grids

_CHUNK = 65536
_STREAM_PATHS = 20_000

_SET_KINDS = ("ball", "ball-complement", "halfspace", "all")


def _uniform_value(arr: np.ndarray, d: int):
    """Return the constant value of a field, or None if it varies in space."""
    flat = arr.reshape(-1, *arr.shape[d:])
    first = flat[0]
    if np.all(flat == first):
        return np.array(first, dtype=float)
    return None


@dataclass(frozen=True)
class PathEnsemble:
    """Terminal state of a batch of weighted diffusion paths.

    ``log_weight`` carries the trapezoid-rule potential integral
    -int_0^t V(X_s) ds per path; ``log_rn`` is the Girsanov logarithm of the
    optional drift tilt (zero when untilted), so exp(log_weight + log_rn)
    is an unbiased sample of the survival functional under the original
    dynamics.  Weights lie in (0, 1] whenever V >= 0 and no tilt is used.
    """

    x0: np.ndarray
    t: float
    dt: float
    n_paths: int
    terminal: np.ndarray
    log_weight: np.ndarray
    log_rn: np.ndarray
    tilt: np.ndarray | None
    seed: int
    chunk: int
    spec: EnvSpec
    env_seed: int

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weight)

    def stream_keys(self) -> tuple[tuple[int, int], ...]:
        n_chunks = (self.n_paths + self.chunk - 1) // self.chunk
        return tuple((self.seed, _STREAM_PATHS + c) for c in range(n_chunks))

    def save(self, path_base: str) -> None:
        """Persist terminal positions and weights to <base>.npz + <base>.json."""
        np.savez_compressed(
            f"{path_base}.npz",
            terminal=self.terminal, log_weight=self.log_weight, log_rn=self.log_rn,
        )
        sidecar = {
            "x0": self.x0.tolist(), "t": self.t, "dt": self.dt,
            "n_paths": self.n_paths, "seed": self.seed, "chunk": self.chunk,
            "tilt": None if self.tilt is None else self.tilt.tolist(),
            "env_seed": self.env_seed, "spec": self.spec.to_dict(),
        }
        with open(f"{path_base}.json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_path_ensemble(path_base: str) -> PathEnsemble:
    with open(f"{path_base}.json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    data = np.load(f"{path_base}.npz")
    tilt = sidecar["tilt"]
    return PathEnsemble(
        x0=np.asarray(sidecar["x0"], dtype=float), t=float(sidecar["t"]),
        dt=float(sidecar["dt"]), n_paths=int(sidecar["n_paths"]),
        terminal=data["terminal"], log_weight=data["log_weight"],
        log_rn=data["log_rn"],
        tilt=None if tilt is None else np.asarray(tilt, dtype=float),
        seed=int(sidecar["seed"]), chunk=int(sidecar["chunk"]),
        spec=EnvSpec.from_dict(sidecar["spec"]), env_seed=int(sidecar["env_seed"]),
    )


def simulate_paths(coeffs: CoefficientSet, x0, t: float, dt: float,
                   n_paths: int, seed: int = 0, *, tilt=None) -> PathEnsemble:
    """Euler-Maruyama paths of dX = b dt + sigma dB with survival weights.

    The potential integral is accumulated by the trapezoid rule alongside
    the stepping.  A tilt vector theta changes the simulated drift to
    b + 2 A theta and accumulates the Radon-Nikodym logarithm
    -gamma.dB - |gamma|^2 dt / 2 with gamma = sigma^T theta, so that
    weighted averages remain unbiased for the untilted dynamics.  Constant
    coefficient fields are detected and skip per-step interpolation.
    """
    if coeffs.spec.hamiltonian != "quadratic-drift-model":
        raise ConfigurationError(
            "path simulation requires a quadratic-drift-model coefficient set")
    d = coeffs.d
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (d,):
        raise ConfigurationError(f"x0 must have shape ({d},), got {x0.shape}")
    if not (t > 0 and dt > 0):
        raise ConfigurationError("t and dt must be positive")
    n_steps = int(round(t / dt))
    if n_steps < 1 or abs(n_steps * dt - t) > 1e-9 * max(1.0, t):
        raise ConfigurationError(f"dt = {dt} must divide the horizon t = {t}")
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ConfigurationError("n_paths must be >= 1")
    theta = None
    if tilt is not None:
        theta = np.asarray(tilt, dtype=float).reshape(-1)
        if theta.shape != (d,):
            raise ConfigurationError(f"tilt must have shape ({d},)")

    sig_const = _uniform_value(coeffs.sigma, d)
    b_const = _uniform_value(coeffs.b, d)
    V_const = _uniform_value(coeffs.V, d)
    sqdt = math.sqrt(dt)

    terminal = np.empty((n_paths, d))
    log_w = np.empty(n_paths)
    log_rn = np.zeros(n_paths)
    n_chunks = (n_paths + _CHUNK - 1) // _CHUNK
    for c in range(n_chunks):
        lo = c * _CHUNK
        m = min(_CHUNK, n_paths - lo)
        gen = _rng(seed, _STREAM_PATHS + c)
        X = np.tile(x0, (m, 1))
        lw = np.zeros(m)
        lr = np.zeros(m)
        V_here = None if V_const is not None else coeffs.field_at(coeffs.V, X)
        for _ in range(n_steps):
            xi = gen.standard_normal((m, d))
            if sig_const is not None:
                noise = (xi @ sig_const.T) * sqdt
            else:
                sig = coeffs.field_at(coeffs.sigma, X)
                noise = np.einsum("nij,nj->ni", sig, xi) * sqdt
            if b_const is not None:
                step = noise + b_const * dt
            else:
                step = noise + coeffs.field_at(coeffs.b, X) * dt
            if theta is not None:
                if sig_const is not None:
                    gamma0 = sig_const.T @ theta
                    gamma = np.broadcast_to(gamma0, (m, d))
                    step = step + (sig_const @ gamma0) * dt
                else:
                    gamma = np.einsum("nji,j->ni", sig, theta)
                    step = step + np.einsum("nij,nj->ni", sig, gamma) * dt
                lr -= np.einsum("ni,ni->n", gamma, xi) * sqdt
                lr -= 0.5 * np.einsum("ni,ni->n", gamma, gamma) * dt
            X = X + step
            if V_const is not None:
                lw -= dt * float(V_const)
            else:
                V_new = coeffs.field_at(coeffs.V, X)
                lw -= 0.5 * dt * (V_here + V_new)
                V_here = V_new
        terminal[lo:lo + m] = X
        log_w[lo:lo + m] = lw
        log_rn[lo:lo + m] = lr
    return PathEnsemble(
        x0=x0, t=float(t), dt=float(dt), n_paths=n_paths, terminal=terminal,
        log_weight=log_w, log_rn=log_rn, tilt=theta, seed=int(seed),
        chunk=_CHUNK, spec=coeffs.spec, env_seed=coeffs.seed,
    )


def partition_function(ensemble: PathEnsemble, *, n_batches: int = 32):
    """Monte Carlo estimate of S(t, x0) with a batch-means standard error.

    Returns (value, stderr).  Tilted ensembles are corrected by their
    Radon-Nikodym weights automatically.
    """
    if ensemble.n_paths < 2:
        raise ConfigurationError("partition_function needs at least 2 paths")
    n_batches = int(n_batches)
    if n_batches < 2:
        raise ConfigurationError("n_batches must be >= 2")
    w = np.exp(ensemble.log_weight + ensemble.log_rn)
    value = float(np.mean(w))
    nb = min(n_batches, ensemble.n_paths)
    means = np.array([float(np.mean(b)) for b in np.array_split(w, nb)])
    stderr = float(np.std(means, ddof=1) / math.sqrt(nb))
    return value, stderr


def _torus_interp(values: np.ndarray, h: float, pts: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of a node field on the torus."""
    d = values.ndim
    n = values.shape[0]
    L = n * h
    pts = np.asarray(pts, dtype=float)
    scalar = pts.ndim == 1
    p2 = pts.reshape(-1, d)
    u = np.mod(p2, L) / h
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    i0 = np.mod(i0, n)
    out = np.zeros(p2.shape[0])
    for corner in range(1 << d):
        wgt = np.ones(p2.shape[0])
        idx = []
        for ax in range(d):
            c = (corner >> ax) & 1
            wgt = wgt * (frac[:, ax] if c else 1.0 - frac[:, ax])
            idx.append(np.mod(i0[:, ax] + c, n))
        out += wgt * values[tuple(idx)]
    if scalar:
        return out[0]
    return out.reshape(pts.shape[:-1])


@dataclass(frozen=True)
class PartitionField:
    """Survival function S on the periodicity cell at selected times."""

    t: float
    dt: float
    h: float
    n_nodes: int
    d: int
    times: tuple[float, ...]
    snapshots: np.ndarray
    spec: EnvSpec
    env_seed: int

    @property
    def values(self) -> np.ndarray:
        return self.snapshots[-1]

    def at_time(self, s: float) -> np.ndarray:
        for k, tk in enumerate(self.times):
            if abs(tk - s) <= 1e-9 * max(1.0, abs(s)):
                return self.snapshots[k]
        raise DomainError(f"no snapshot stored at time {s}; have {self.times}")

    def interp(self, pts, time=None) -> np.ndarray:
        vals = self.values if time is None else self.at_time(time)
        return _torus_interp(vals, self.h, pts)


def _parabolic_pieces(coeffs: CoefficientSet, n: int):
    """Sample coefficients on an n-per-axis cell grid for the explicit march.

    Returns (comp, out) where comp holds the dominance-clipped diffusion
    components plus the effective diagonals 'Aeff{i}', and out is the
    nodewise outflow 2 sum_i Aeff_i/h^2 + 2 sum_{i<j} |A_ij|/h^2 + sum |b_i|/h
    whose reciprocal bounds the stable step.
    """
    d = coeffs.d
    h = coeffs.L / n
    axes = [np.arange(n) * h for _ in range(d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    comp = _coefficient_grids(coeffs, pts)
    out = np.zeros((n,) * d)
    for i in range(d):
        offsum = np.zeros((n,) * d)
        for j in range(d):
            if j != i:
                offsum = offsum + np.abs(comp[f"A{min(i, j)}{max(i, j)}"])
        comp[f"Aeff{i}"] = np.maximum(comp[f"A{i}{i}"] - offsum, 0.0)
        out += 2.0 * comp[f"Aeff{i}"] / h**2 + np.abs(comp[f"b{i}"]) / h
    for i in range(d):
        for j in range(i + 1, d):
            out += 2.0 * np.abs(comp[f"A{i}{j}"]) / h**2
    return comp, out, h


def _parabolic_rhs(S: np.ndarray, comp: dict, d: int, h: float) -> np.ndarray:
    """Monotone discretization of tr(A D^2 S) + b . DS on the torus."""
    inv2 = 1.0 / (h * h)
    out = np.zeros_like(S)
    for i in range(d):
        out += comp[f"Aeff{i}"] * (np.roll(S, -1, i) - 2.0 * S + np.roll(S, 1, i)) * inv2
    for i in range(d):
        for j in range(i + 1, d):
            Aij = comp[f"A{i}{j}"]
            Spp = np.roll(np.roll(S, -1, i), -1, j)
            Smm = np.roll(np.roll(S, 1, i), 1, j)
            Spm = np.roll(np.roll(S, -1, i), 1, j)
            Smp = np.roll(np.roll(S, 1, i), -1, j)
            pair = np.where(Aij >= 0, Spp + Smm, Spm + Smp)
            out += np.abs(Aij) * (pair - 2.0 * S) * inv2
    for i in range(d):
        b = comp[f"b{i}"]
        out += np.maximum(b, 0.0) * (np.roll(S, -1, i) - S) / h
        out += np.minimum(b, 0.0) * (S - np.roll(S, 1, i)) / h
    return out


def pde_partition_function(coeffs: CoefficientSet, t: float, grid: int | None = None,
                           *, dt: float | None = None,
                           snapshot_times=()) -> PartitionField:
    """March S_t = tr(A D^2 S) + b.DS - V S from S(0) = 1 on the cell.

    Strang splitting alternates exact half-steps of the potential factor
    exp(-V dt / 2) with one explicit monotone step of the transport-diffusion
    part, so 0 < S <= 1 holds nodewise whenever V >= 0.  `grid` is the node
    count per axis (defaults to the environment's own grid); `snapshot_times`
    requests stored intermediate states, and the final time is always kept.
    """
    if coeffs.spec.hamiltonian != "quadratic-drift-model":
        raise ConfigurationError(
            "the parabolic march requires a quadratic-drift-model coefficient set")
    if not t > 0:
        raise ConfigurationError("horizon t must be positive")
    d = coeffs.d
    n = coeffs.spec.n_nodes if grid is None else int(grid)
    if n < 4:
        raise ConfigurationError("grid must have at least 4 nodes per axis")
    comp, out, h = _parabolic_pieces(coeffs, n)
    out_max = float(np.max(out))
    dt_stable = math.inf if out_max == 0.0 else 1.0 / out_max
    if dt is None:
        dt = 0.5 * dt_stable if math.isfinite(dt_stable) else t / 8.0
        dt = min(dt, t)
    elif dt > dt_stable * (1.0 + 1e-12):
        raise ConfigurationError(
            f"explicit step dt = {dt} violates the stability bound {dt_stable:.6g}")
    elif dt <= 0:
        raise ConfigurationError("dt must be positive")

    req = sorted(set(float(s) for s in snapshot_times))
    for s in req:
        if not (0.0 < s <= t * (1.0 + 1e-12)):
            raise ConfigurationError(f"snapshot time {s} outside (0, {t}]")
    if not req or abs(req[-1] - t) > 1e-9 * max(1.0, t):
        req.append(float(t))

    S = np.ones((n,) * d)
    snaps = np.empty((len(req),) + S.shape)
    t_cur = 0.0
    for k, s in enumerate(req):
        seg = s - t_cur
        n_sub = max(1, int(math.ceil(seg / dt - 1e-12)))
        dt_sub = seg / n_sub
        half = np.exp(-0.5 * dt_sub * comp["V"])
        for _ in range(n_sub):
            S = half * S
            S = S + dt_sub * _parabolic_rhs(S, comp, d, h)
            S = half * S
        t_cur = s
        snaps[k] = S
    return PartitionField(
        t=float(t), dt=float(dt), h=h, n_nodes=n, d=d, times=tuple(req),
        snapshots=snaps, spec=coeffs.spec, env_seed=coeffs.seed,
    )


@dataclass(frozen=True)
class HopfColeReport:
    """Sup and mean residual of the viscous HJ operator on U = -log S."""

    sup_residual: float
    mean_residual: float
    time: float
    h: float
    dt_snapshots: float
    eps_scale: float

    def to_dict(self) -> dict:
        return {
            "sup_residual": self.sup_residual, "mean_residual": self.mean_residual,
            "time": self.time, "h": self.h, "dt_snapshots": self.dt_snapshots,
            "eps_scale": self.eps_scale,
        }


def hopf_cole_residual(field: PartitionField, coeffs: CoefficientSet,
                       eps_scale: float = 1.0) -> HopfColeReport:
    """Residual of U_t - tr(A D^2 U) + DU.A DU - b.DU - V on U = -log S.

    This is the equation the marched survival function satisfies exactly in
    the continuum (the Hopf-Cole image of S_t = tr(A D^2 S) + b.DS - V S for
    paths drifting with +b); all derivatives use centered second-order
    stencils on the last three stored snapshots, which must be equally
    spaced.  The residual field is invariant under the parabolic rescaling
    (x, t) -> (x/eps, t/eps), so `eps_scale` is recorded for labelling only.
    """
    if eps_scale <= 0:
        raise ConfigurationError("eps_scale must be positive")
    if len(field.times) < 3:
        raise ConfigurationError(
            "hopf_cole_residual needs at least three stored snapshots")
    t0, t1, t2 = field.times[-3:]
    if abs((t2 - t1) - (t1 - t0)) > 1e-9 * max(1.0, t2 - t0):
        raise ConfigurationError("the last three snapshots must be equally spaced")
    S3 = field.snapshots[-3:]
    if np.any(S3 <= 0.0):
        raise DomainError("survival function must be positive for the log transform")
    U0, U1, U2 = -np.log(S3)
    delta = t1 - t0
    Ut = (U2 - U0) / (2.0 * delta)

    d, n, h = field.d, field.n_nodes, field.h
    axes = [np.arange(n) * h for _ in range(d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    A = coeffs.field_at(coeffs.A, pts)
    bf = coeffs.field_at(coeffs.b, pts)
    Vf = coeffs.field_at(coeffs.V, pts)

    P = np.stack([(np.roll(U1, -1, i) - np.roll(U1, 1, i)) / (2.0 * h)
                  for i in range(d)], axis=-1)
    diff = np.zeros_like(U1)
    for i in range(d):
        diff += A[..., i, i] * (np.roll(U1, -1, i) - 2.0 * U1 + np.roll(U1, 1, i)) / h**2
    for i in range(d):
        for j in range(i + 1, d):
            Upp = np.roll(np.roll(U1, -1, i), -1, j)
            Umm = np.roll(np.roll(U1, 1, i), 1, j)
            Upm = np.roll(np.roll(U1, -1, i), 1, j)
            Ump = np.roll(np.roll(U1, 1, i), -1, j)
            diff += 2.0 * A[..., i, j] * (Upp + Umm - Upm - Ump) / (4.0 * h**2)
    quad = np.einsum("...i,...ij,...j->...", P, A, P)
    bdot = np.einsum("...i,...i->...", bf, P)
    resid = Ut - diff + quad - bdot - Vf
    return HopfColeReport(
        sup_residual=float(np.max(np.abs(resid))),
        mean_residual=float(np.mean(np.abs(resid))),
        time=float(t1), h=h, dt_snapshots=float(delta), eps_scale=float(eps_scale),
    )


@dataclass(frozen=True)
class SurvivalReport:
    """Gap between (1/t) log S(t, tx) and the effective level at p = 0."""

    hbar0: float
    x: tuple[float, ...]
    times: tuple[float, ...]
    log_rates: tuple[float, ...]
    gaps: tuple[float, ...]
    gap_decreasing: bool

    def to_dict(self) -> dict:
        return {
            "hbar0": self.hbar0, "x": list(self.x), "times": list(self.times),
            "log_rates": list(self.log_rates), "gaps": list(self.gaps),
            "gap_decreasing": self.gap_decreasing,
        }

    def save_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def survival_rate_check(coeffs: CoefficientSet, x, t_ladder, hbar0: float,
                        *, grid: int | None = None,
                        dt: float | None = None) -> SurvivalReport:
    """Compare (1/t) log S(t, tx) with hbar0 along a ladder of horizons.

    One parabolic march to the largest horizon serves all ladder entries via
    stored snapshots.  ``hbar0`` is the effective Hamiltonian at zero
    momentum (nonpositive for V >= 0), normally taken from the cell route.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (coeffs.d,):
        raise ConfigurationError(f"x must have shape ({coeffs.d},)")
    times = sorted(float(s) for s in t_ladder)
    if not times or times[0] <= 0:
        raise ConfigurationError("t_ladder must contain positive horizons")
    field = pde_partition_function(coeffs, times[-1], grid, dt=dt,
                                   snapshot_times=tuple(times))
    log_rates = []
    gaps = []
    for s in times:
        Sval = float(field.interp(s * x, time=s))
        if Sval <= 0:
            raise DomainError(f"survival function vanished at t = {s}")
        rate = math.log(Sval) / s
        log_rates.append(rate)
        gaps.append(abs(rate - hbar0))
    dec = all(gaps[k + 1] <= gaps[k] + 1e-12 for k in range(len(gaps) - 1))
    return SurvivalReport(
        hbar0=float(hbar0), x=tuple(x.tolist()), times=tuple(times),
        log_rates=tuple(log_rates), gaps=tuple(gaps), gap_decreasing=dec,
    )


@dataclass(frozen=True)
class SetDescriptor:
    """Target set for terminal-position events.

    Kinds: "ball" is the open ball |y - center| < radius, "ball-complement"
    the closed set |y - center| >= radius (the two partition space exactly),
    "halfspace" the closed set normal . y >= offset, and "all" the whole
    space.  Radius zero makes an empty ball and a full complement.
    """

    kind: str
    center: tuple[float, ...] | None = None
    radius: float | None = None
    normal: tuple[float, ...] | None = None
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in _SET_KINDS:
            raise ConfigurationError(
                f"unknown set kind {self.kind!r}; expected one of {_SET_KINDS}")
        if self.kind in ("ball", "ball-complement"):
            if self.center is None or self.radius is None:
                raise ConfigurationError(f"{self.kind} needs center and radius")
            if self.radius < 0:
                raise ConfigurationError("radius must be >= 0")
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))
            object.__setattr__(self, "radius", float(self.radius))
        elif self.kind == "halfspace":
            if self.normal is None:
                raise ConfigurationError("halfspace needs a normal vector")
            nrm = tuple(float(c) for c in self.normal)
            if not any(c != 0.0 for c in nrm):
                raise ConfigurationError("halfspace normal must be nonzero")
            object.__setattr__(self, "normal", nrm)
            object.__setattr__(self, "offset", float(self.offset))

    @property
    def d(self) -> int | None:
        if self.center is not None:
            return len(self.center)
        if self.normal is not None:
            return len(self.normal)
        return None

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "all":
            return np.ones(y.shape[:-1], dtype=bool)
        if self.kind == "halfspace":
            return y @ np.asarray(self.normal) >= self.offset
        dist = np.linalg.norm(y - np.asarray(self.center), axis=-1)
        if self.kind == "ball":
            return dist < self.radius
        return dist >= self.radius

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "center": None if self.center is None else list(self.center),
            "radius": self.radius,
            "normal": None if self.normal is None else list(self.normal),
            "offset": self.offset,
        }


def q_partition(ensemble: PathEnsemble, sets) -> np.ndarray:
    """Empirical Q-measure of a partition of space by terminal velocity.

    Each path must land in exactly one set (checked), so the returned
    probabilities are exact ratios of weight masses; the largest cell
    absorbs the final rounding, which makes math.fsum of the result equal
    1.0 exactly.
    """
    if not sets:
        raise ConfigurationError("q_partition needs at least one set")
    vel = ensemble.terminal / ensemble.t
    masks = [K.contains(vel) for K in sets]
    counts = np.sum(np.stack(masks), axis=0)
    if np.any(counts != 1):
        raise ConfigurationError(
            "sets do not partition the sample: some path lands in "
            f"{int(counts.min())}..{int(counts.max())} sets")
    w = np.exp(ensemble.log_weight + ensemble.log_rn)
    masses = [math.fsum(w[m]) for m in masks]
    den = math.fsum(masses)
    probs = np.array([mass / den for mass in masses])
    top = int(np.argmax(probs))
    probs[top] = 1.0 - math.fsum(p for k, p in enumerate(probs) if k != top)
    return probs


@dataclass(frozen=True)
class RateEstimate:
    """Weighted-hit rate of a terminal event against the Hopf-Lax prediction.

    With zero hits the estimate is infinite and ``lower_bound`` reports a
    rule-of-three bound -log(3 / n_eff) / t on the rate, where n_eff is the
    effective sample size of the importance weights.
    """

    descriptor: SetDescriptor
    value: float
    stderr: float
    prediction: float
    n_paths: int
    n_hits: int
    zero_hits: bool
    lower_bound: float
    t: float
    tilted: bool

    def to_dict(self) -> dict:
        out = {
            "value": self.value, "stderr": self.stderr, "prediction": self.prediction,
            "n_paths": self.n_paths, "n_hits": self.n_hits,
            "zero_hits": self.zero_hits, "lower_bound": self.lower_bound,
            "t": self.t, "tilted": self.tilted,
        }
        out.update({f"set_{k}": v for k, v in self.descriptor.to_dict().items()})
        return out


def save_rates_csv(estimates, path: str) -> None:
    """Write rate estimates as CSV, one row per estimate."""
    rows = [est.to_dict() for est in estimates]
    if not rows:
        raise ConfigurationError("no rate estimates to save")
    keys = list(rows[0].keys())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row[k]) for k in keys) + "\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, (list, tuple)):
        return '"' + " ".join(str(c) for c in v) + '"'
    return str(v)


def empirical_rate(ensemble: PathEnsemble, K: SetDescriptor, x,
                   *, prediction: float = math.nan,
                   n_batches: int = 32) -> RateEstimate:
    """Estimate -(1/t) log Q[X_t in tK] from a weighted ensemble.

    The ensemble must start at t*x for the scaling X_t/t in K to match the
    large-deviation event.  Q-probabilities are weighted hit fractions
    (Radon-Nikodym corrected when tilted); the standard error combines
    batch-means variation of the hit fraction with the delta method for
    the logarithm.
    """
    t = ensemble.t
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != ensemble.x0.shape:
        raise ConfigurationError(f"x must have shape {ensemble.x0.shape}")
    if np.max(np.abs(ensemble.x0 - t * x)) > 1e-8 * max(1.0, float(np.max(np.abs(t * x)))):
        raise ConfigurationError(
            "ensemble must start at t*x for the event X_t in t*K; "
            f"got x0 = {ensemble.x0.tolist()} with t*x = {(t * x).tolist()}")
    vel = ensemble.terminal / t
    mask = K.contains(vel)
    w = np.exp(ensemble.log_weight + ensemble.log_rn)
    Z = float(np.sum(w))
    n_hits = int(np.count_nonzero(mask))
    tilted = ensemble.tilt is not None
    if n_hits == 0:
        n_eff = Z * Z / float(np.sum(w * w))
        lower = -math.log(min(3.0 / n_eff, 1.0)) / t
        return RateEstimate(
            descriptor=K, value=math.inf, stderr=math.nan, prediction=prediction,
            n_paths=ensemble.n_paths, n_hits=0, zero_hits=True, lower_bound=lower,
            t=t, tilted=tilted)
    Q = float(np.sum(w[mask])) / Z
    value = -math.log(Q) / t
    nb = min(int(n_batches), ensemble.n_paths)
    if nb < 2:
        raise ConfigurationError("n_batches must be >= 2")
    idx = np.array_split(np.arange(ensemble.n_paths), nb)
    Qb = np.array([float(np.sum(w[i][mask[i]])) / max(float(np.sum(w[i])), 1e-300)
                   for i in idx])
    se_Q = float(np.std(Qb, ddof=1) / math.sqrt(nb))
    stderr = se_Q / (Q * t)
    return RateEstimate(
        descriptor=K, value=value, stderr=stderr, prediction=prediction,
        n_paths=ensemble.n_paths, n_hits=n_hits, zero_hits=False,
        lower_bound=math.nan, t=t, tilted=tilted)


def _project_onto(K: SetDescriptor, Y: np.ndarray) -> np.ndarray:
    """Project points onto the closure of K (identity for kind 'all')."""
    if K.kind == "all":
        return Y
    if K.kind == "halfspace":
        nrm = np.asarray(K.normal)
        viol = K.offset - Y @ nrm
        scale = np.maximum(viol, 0.0) / float(nrm @ nrm)
        return Y + scale[..., None] * nrm
    c = np.asarray(K.center)
    rel = Y - c
    dist = np.linalg.norm(rel, axis=-1)
    if K.kind == "ball":
        outside = dist > K.radius
    else:
        outside = dist < K.radius
    if not np.any(outside):
        return Y
    safe = np.where(dist > 1e-300, dist, 1.0)
    unit = np.where(dist[..., None] > 1e-300, rel / safe[..., None], 0.0)
    fallback = np.zeros_like(unit)
    fallback[..., 0] = 1.0
    unit = np.where(dist[..., None] > 1e-300, unit, fallback)
    proj = c + K.radius * unit
    return np.where(outside[..., None], proj, Y)


def _sphere_cloud(d: int, n: int) -> np.ndarray:
    if d == 1:
        return np.array([[-1.0], [1.0]])
    if d == 2:
        ang = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    k = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * k / n)
    golden = np.pi * (1.0 + math.sqrt(5.0))
    ang = golden * k
    return np.stack([np.sin(phi) * np.cos(ang), np.sin(phi) * np.sin(ang),
                     np.cos(phi)], axis=-1)


def ldp_prediction(lagrangian, hbar0: float, K: SetDescriptor, x=None) -> float:
    """inf over y in K of Lbar(x - y) + hbar0 via projected lattice search.

    Candidate terminal points come from the Lagrangian's own lattice shifted
    to x and projected onto the closure of K (the infimum of a continuous
    function over an open set equals that over its closure), enriched with a
    dense sampling of ball boundaries, then polished by a Nelder-Mead run on
    the projected objective.  Flagged table entries participate through
    their extrapolated values.
    """
    d = len(lagrangian.axes)
    if K.d is not None and K.d != d:
        raise ConfigurationError(f"set dimension {K.d} does not match table dimension {d}")
    if K.kind == "ball" and K.radius == 0.0:
        raise DomainError("target set is empty (open ball of radius zero)")
    x = np.zeros(d) if x is None else np.asarray(x, dtype=float).reshape(d)

    Z = np.stack(np.meshgrid(*lagrangian.axes, indexing="ij"), axis=-1).reshape(-1, d)
    cand = [_project_onto(K, x - Z)]
    if K.kind in ("ball", "ball-complement"):
        n_dir = {1: 2, 2: 720, 3: 2048}[d]
        cand.append(np.asarray(K.center) + K.radius * _sphere_cloud(d, n_dir))
    Y = np.concatenate(cand, axis=0)

    vals, _ = lagrangian.evaluate(x - Y, extrapolate=True)
    finite = np.isfinite(vals)
    if not np.any(finite):
        raise DomainError("no candidate with a finite Lagrangian value in the target set")
    best = int(np.flatnonzero(finite)[np.argmin(vals[finite])])
    best_val = float(vals[best])
    y0 = Y[best]

    def objective(y):
        yp = _project_onto(K, y.reshape(1, d))[0]
        v, _ = lagrangian.evaluate((x - yp).reshape(1, d), extrapolate=True)
        return float(v[0]) if np.isfinite(v[0]) else 1e300

    res = optimize.minimize(objective, y0, method="Nelder-Mead",
                            options={"maxiter": 400 * d, "xatol": 1e-10, "fatol": 1e-12})
    if np.isfinite(res.fun) and res.fun < best_val:
        best_val = float(res.fun)
    return best_val + float(hbar0)
