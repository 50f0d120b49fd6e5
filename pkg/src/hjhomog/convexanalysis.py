"""Discrete convex duality and the homogenized Hopf-Lax solve.

Tables are node fields on rectangular lattices.  Out-of-domain entries are
marked with +inf and never enter any sup.  The Legendre transform is the
exact lattice sup with a fixed left-to-right association

    f*(z) = max_p (p_0 z_0 + p_1 z_1 + ... - f(p)),

which is what makes it reproducible bit for bit against an independent
double-loop evaluation: the two computations maximize the identical
multiset of doubles.  Transform outputs carry a boundary-argmax flag per
entry; a flagged entry means the sup was attained on the rim of the finite
domain, so the true conjugate may exceed the lattice value there and the
entry behaves as +inf when the table is conjugated again.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError

_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Scalar node field on a rectangular lattice with multilinear interp."""

    axes: tuple
    values: np.ndarray

    def __post_init__(self):
        axes = tuple(np.asarray(ax, dtype=float) for ax in self.axes)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.shape != tuple(len(ax) for ax in axes):
            raise ConfigurationError("values shape does not match the axes")
        for ax in axes:
            if len(ax) < 2 or np.any(np.diff(ax) <= 0):
                raise ConfigurationError("axes must be strictly increasing")

    @property
    def d(self) -> int:
        return len(self.axes)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def interp(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        scalar = pts.ndim == 1
        P = pts.reshape(-1, self.d)
        idx = []
        frac = []
        for ax in range(self.d):
            a = self.axes[ax]
            if np.any(P[:, ax] < a[0] - 1e-12) or np.any(P[:, ax] > a[-1] + 1e-12):
                raise DomainError("interpolation point outside the lattice box")
            i = np.clip(np.searchsorted(a, P[:, ax], side="right") - 1,
                        0, len(a) - 2)
            idx.append(i)
            frac.append((P[:, ax] - a[i]) / (a[i + 1] - a[i]))
        out = np.zeros(P.shape[0])
        for corner in range(1 << self.d):
            wgt = np.ones(P.shape[0])
            loc = []
            for ax in range(self.d):
                c = (corner >> ax) & 1
                wgt = wgt * (frac[ax] if c else 1.0 - frac[ax])
                loc.append(idx[ax] + c)
            out += wgt * self.values[tuple(loc)]
        return float(out[0]) if scalar else out.reshape(pts.shape[:-1])


class ConvexTable(GridFunction):
    """Lattice table of a convex function, +inf marking out-of-domain.

    ``flags`` marks entries whose value came from a sup attained on the
    boundary of the finite domain; they are treated as +inf by further
    transforms and reported as low-confidence by ``evaluate``.
    """

    def __init__(self, axes, values, flags=None):
        values = np.asarray(values, dtype=float)
        super().__init__(tuple(axes), np.where(np.isnan(values), np.inf, values))
        if flags is None:
            flags = np.zeros(self.values.shape, dtype=bool)
        flags = np.asarray(flags, dtype=bool)
        if flags.shape != self.values.shape:
            raise ConfigurationError("flags shape does not match values")
        object.__setattr__(self, "flags", flags)
        if np.any(np.isneginf(self.values)):
            raise ConfigurationError("-inf is not a valid table value")

    def effective_values(self) -> np.ndarray:
        """Values with flagged entries promoted to the +inf marker."""
        out = self.values.copy()
        out[self.flags] = np.inf
        return out

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.effective_values())

    def evaluate(self, pts: np.ndarray, extrapolate: bool = True):
        """Multilinear values plus a low-confidence mask.

        Points outside the box are continued linearly along each exceeded
        axis using the outermost finite slope (a lower bound for convex
        data) and flagged; so are points whose interpolation cell touches a
        non-finite or flagged entry.  Flagged entries keep their stored
        values during interpolation: the mask is the only confidence
        signal, so callers decide whether to trust them.
        """
        pts = np.asarray(pts, dtype=float)
        scalar = pts.ndim == 1
        P = pts.reshape(-1, self.d)
        lo = np.array([ax[0] for ax in self.axes])
        hi = np.array([ax[-1] for ax in self.axes])
        Pc = np.clip(P, lo, hi)
        outside = np.any((P < lo - 1e-12) | (P > hi + 1e-12), axis=1)

        vals = _interp_inf(self.axes, self.values, Pc)
        flagged = ~np.isfinite(vals) | outside

        # flag cells touching a flagged entry
        if self.flags.any():
            touch = _interp_inf(self.axes, self.flags.astype(float), Pc)
            flagged |= touch > 0.0

        if extrapolate and outside.any():
            for k in np.nonzero(outside)[0]:
                if not np.isfinite(vals[k]):
                    continue
                add = 0.0
                for ax in range(self.d):
                    over = P[k, ax] - Pc[k, ax]
                    if over == 0.0:
                        continue
                    a = self.axes[ax]
                    step = (a[-1] - a[-2]) if over > 0 else (a[1] - a[0])
                    probe = Pc[k].copy()
                    probe[ax] -= np.sign(over) * step
                    inner = _interp_inf(self.axes, self.values, probe[None, :])[0]
                    if not np.isfinite(inner):
                        vals[k] = np.inf
                        add = 0.0
                        break
                    add += abs(over) * (vals[k] - inner) / step
                vals[k] = vals[k] + add
        if scalar:
            return float(vals[0]), bool(flagged[0])
        return vals.reshape(pts.shape[:-1]), flagged.reshape(pts.shape[:-1])

    def save(self, base):
        """Write <base>.csv (lattice rows) and <base>.json (axes)."""
        base = Path(base)
        P = self.points().reshape(-1, self.d)
        v = self.values.reshape(-1)
        fl = self.flags.reshape(-1)
        with open(base.with_suffix(".csv"), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"p{i}" for i in range(self.d)] + ["value", "flag"])
            for k in range(P.shape[0]):
                wr.writerow([f"{c:.17g}" for c in P[k]]
                            + [f"{v[k]:.17g}", int(fl[k])])
        meta = {"axes": [list(map(float, ax)) for ax in self.axes]}
        base.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True))
        return base.with_suffix(".csv"), base.with_suffix(".json")


def load_convex_table(base) -> ConvexTable:
    base = Path(base)
    meta = json.loads(base.with_suffix(".json").read_text())
    axes = tuple(np.asarray(ax, dtype=float) for ax in meta["axes"])
    shape = tuple(len(ax) for ax in axes)
    vals, flags = [], []
    with open(base.with_suffix(".csv"), newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for row in rd:
            vals.append(float(row[len(axes)]))
            flags.append(bool(int(row[len(axes) + 1])))
    return ConvexTable(axes, np.asarray(vals).reshape(shape),
                       np.asarray(flags).reshape(shape))


def _interp_inf(axes, values: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Multilinear interpolation that treats +inf corners as a hard marker.

    A corner with nonzero weight that is not finite makes the result +inf;
    zero-weight corners are ignored, so node queries next to markers stay
    finite.
    """
    d = len(axes)
    idx, frac = [], []
    for ax in range(d):
        a = axes[ax]
        i = np.clip(np.searchsorted(a, P[:, ax], side="right") - 1, 0, len(a) - 2)
        idx.append(i)
        frac.append((P[:, ax] - a[i]) / (a[i + 1] - a[i]))
    out = np.zeros(P.shape[0])
    bad = np.zeros(P.shape[0], dtype=bool)
    for corner in range(1 << d):
        wgt = np.ones(P.shape[0])
        loc = []
        for ax in range(d):
            c = (corner >> ax) & 1
            wgt = wgt * (frac[ax] if c else 1.0 - frac[ax])
            loc.append(idx[ax] + c)
        v = values[tuple(loc)]
        active = wgt > 1e-12
        bad |= active & ~np.isfinite(v)
        out += wgt * np.where(active & np.isfinite(v), v, 0.0)
    out[bad] = np.inf
    return out


def _rim_mask(table: ConvexTable) -> np.ndarray:
    """Finite entries on the lattice hull or adjacent to a non-finite one."""
    eff = table.effective_values()
    finite = np.isfinite(eff)
    rim = np.zeros(eff.shape, dtype=bool)
    for ax in range(eff.ndim):
        sl = [slice(None)] * eff.ndim
        sl[ax] = 0
        rim[tuple(sl)] = True
        sl[ax] = -1
        rim[tuple(sl)] = True
        pad_lo = np.take(finite, [0], axis=ax)
        pad_hi = np.take(finite, [-1], axis=ax)
        nb_lo = np.concatenate([pad_lo, np.take(finite, range(eff.shape[ax] - 1), axis=ax)], axis=ax)
        nb_hi = np.concatenate([np.take(finite, range(1, eff.shape[ax]), axis=ax), pad_hi], axis=ax)
        rim |= ~nb_lo | ~nb_hi
    return rim & finite


def legendre_transform(f: ConvexTable, z_axes=None) -> ConvexTable:
    """Exact discrete conjugate f*(z) = max_p (p.z - f(p)) on a z lattice.

    Non-finite and flagged entries of f never enter the sup.  The output
    flag marks z where every maximizing p sits on the rim of f's finite
    domain, i.e. where the lattice truncation may have cut the true sup.
    With ``z_axes`` None the dual lattice spans the observed slope range at
    twice the node density.
    """
    if z_axes is None:
        z_axes = _default_dual_axes(f)
    z_axes = tuple(np.asarray(ax, dtype=float) for ax in z_axes)
    eff = f.effective_values().reshape(-1)
    P = f.points().reshape(-1, f.d)
    keep = np.isfinite(eff)
    if not keep.any():
        raise DomainError("table has no finite entries to conjugate")
    P = P[keep]
    fv = eff[keep]
    rim = _rim_mask(f).reshape(-1)[keep]

    mesh = np.meshgrid(*z_axes, indexing="ij")
    Z = np.stack(mesh, axis=-1).reshape(-1, len(z_axes))
    out = np.empty(Z.shape[0])
    flags = np.zeros(Z.shape[0], dtype=bool)
    interior = ~rim
    for start in range(0, Z.shape[0], _CHUNK):
        zb = Z[start:start + _CHUNK]
        term = zb[:, 0][:, None] * P[None, :, 0]
        for ax in range(1, P.shape[1]):
            term = term + zb[:, ax][:, None] * P[None, :, ax]
        term = term - fv[None, :]
        best = term.max(axis=1)
        out[start:start + len(zb)] = best
        if interior.any():
            best_int = term[:, interior].max(axis=1)
            flags[start:start + len(zb)] = best_int < best
        else:
            flags[start:start + len(zb)] = True
    shape = tuple(len(ax) for ax in z_axes)
    return ConvexTable(z_axes, out.reshape(shape), flags.reshape(shape))


def _default_dual_axes(f: ConvexTable) -> tuple:
    axes = []
    eff = f.effective_values()
    for ax in range(f.d):
        diffs = np.diff(eff, axis=ax)
        step = np.diff(f.axes[ax])
        shape = [1] * f.d
        shape[ax] = len(step)
        slopes = diffs / step.reshape(shape)
        slopes = slopes[np.isfinite(slopes)]
        s = float(np.max(np.abs(slopes))) if slopes.size else 1.0
        n = 2 * len(f.axes[ax]) + 1
        axes.append(np.linspace(-s, s, n))
    return tuple(axes)


def biconjugate(f: ConvexTable, z_axes=None) -> ConvexTable:
    """Convex envelope proxy: conjugate twice, back onto f's own lattice.

    Always minorizes f; reproduces f when f is a lattice max of affine
    functions whose slopes lie on the dual lattice.  The default dual
    lattice spans the observed slope range at twice the node density.

    The intermediate conjugate enters with its raw values: its rim flags
    only warn that the dual was truncated, and the truncated pair (f, f*)
    is exactly what inverts back to f on the original box.  Input +inf
    markers and input flags are still excluded.
    """
    if z_axes is None:
        z_axes = _default_dual_axes(f)
    star = legendre_transform(f, z_axes)
    return legendre_transform(ConvexTable(star.axes, star.values), f.axes)


def hopf_lax(L: ConvexTable, g: GridFunction, x, t: float,
             use_flagged: bool = False) -> float:
    """Inf-convolution value inf_y (t L((x-y)/t) + g(y)) over g's lattice.

    L is interpolated (and linearly continued outside its box, which keeps
    the formula meaningful for small t).  Non-finite L values exclude the
    corresponding y; low-confidence velocities (rim-flagged or off-box) are
    excluded too unless use_flagged is set, matching a Lagrangian that
    blows up beyond the fitted window.
    """
    if t <= 0.0:
        raise DomainError("hopf_lax needs t > 0")
    x = np.asarray(x, dtype=float)
    Y = g.points().reshape(-1, g.d)
    vel = (x[None, :] - Y) / t
    lvals, lflags = L.evaluate(vel)
    lvals = np.atleast_1d(lvals)
    total = t * lvals + g.values.reshape(-1)
    ok = np.isfinite(total)
    if not use_flagged:
        ok &= ~np.atleast_1d(lflags)
        if not ok.any():
            ok = np.isfinite(total)
    if not ok.any():
        raise DomainError("no admissible y: L is infinite on all velocities")
    return float(total[ok].min())


@dataclass(frozen=True)
class LbarValue:
    """Result of the sup-over-levels Lagrangian formula at one velocity."""

    value: float
    mu_at: float
    edge: bool


def lagrangian_from_mbar(mbar_table, z, hstar: float | None = None) -> LbarValue:
    """Effective Lagrangian via L(z) = sup_mu (|z| mbar_mu(z/|z|) - mu).

    The sup runs over the table's level grid, which must reach down to the
    critical value for the formula to see the minimum of the Hamiltonian
    (the paper states it with levels normalized so that the minimum is 0;
    subtracting hstar from mu and adding it back is the identity, so the
    raw grid is used and hstar only widens the edge diagnostics).  An
    argmax on the first or last grid level is flagged.
    """
    mus = np.asarray(mbar_table.mus, dtype=float)
    if mus.size == 0:
        raise DomainError("empty level grid")
    z = np.asarray(z, dtype=float)
    r = float(np.linalg.norm(z))
    if r < 1e-15:
        vals = -mus
    else:
        e = z / r
        vals = r * _mbar_in_direction(mbar_table, e) - mus
    k = int(np.argmax(vals))
    edge = k in (0, len(mus) - 1)
    if hstar is not None and k == 0 and mus[0] > hstar + 1e-9:
        edge = True
    return LbarValue(value=float(vals[k]), mu_at=float(mus[k]), edge=edge)


def _mbar_in_direction(mbar_table, e: np.ndarray) -> np.ndarray:
    """mbar_mu(e) for all grid levels, interpolated over the direction set."""
    D = np.asarray(mbar_table.directions, dtype=float)
    V = np.asarray(mbar_table.values, dtype=float)
    d = D.shape[1]
    if d == 1:
        j = int(np.argmax(D[:, 0] * e[0]))
        return V[:, j]
    if d == 2:
        th = np.arctan2(D[:, 1], D[:, 0])
        order = np.argsort(th)
        th_s = th[order]
        te = float(np.arctan2(e[1], e[0]))
        j = int(np.searchsorted(th_s, te))
        j0 = (j - 1) % len(th_s)
        j1 = j % len(th_s)
        t0, t1 = th_s[j0], th_s[j1]
        gap = (t1 - t0) % (2.0 * np.pi)
        w = 0.0 if gap < 1e-12 else ((te - t0) % (2.0 * np.pi)) / gap
        return (1.0 - w) * V[:, order[j0]] + w * V[:, order[j1]]
    j = int(np.argmax(D @ e))
    return V[:, j]
