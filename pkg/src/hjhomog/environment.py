"""Random coefficient environments on a periodic torus.

An environment bundles the spatial data of a viscous Hamilton-Jacobi operator

    -tr(A(y) D^2 u) + H(Du, y),      A = sigma^T sigma / 2,

sampled on a regular grid over the torus [0, L)^d.  Two Hamiltonian families
are supported:

* ``power-model``:       H(p, y) = a(y) |p|^q - V(y)
* ``quadratic-drift-model``: H(p, y) = p . A(y) p + b(y) . p - V(y)

Fields are evaluated between nodes by multilinear interpolation with periodic
wrapping.  Sampling is a deterministic function of (spec, seed); randomness
comes from counter-based Philox streams keyed by (seed, stream id) so that
realizations do not depend on iteration order.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DomainError

MODELS = ("constant", "shot-noise-potential", "smoothed-checkerboard", "spectral-field")
HAMILTONIANS = ("power-model", "quadratic-drift-model")

# stream ids for the Philox keying; bump i uses _STREAM_BUMP_BASE + i
_STREAM_COUNT = 1
_STREAM_PHASE = 2
_STREAM_FIELD_A = 3
_STREAM_FIELD_V = 4
_STREAM_BUMP_BASE = 10_000


def _rng(seed: int, stream: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class EnvSpec:
    """Declarative description of an environment.

    Parameters
    ----------
    d : spatial dimension, 1 to 3.
    model : one of ``MODELS``; how the random fields are generated.
    L : torus period.  Must be an integer multiple of ``h`` (and an integer
        number of unit cells for the checkerboard model).
    h : sampling grid spacing.
    hamiltonian : one of ``HAMILTONIANS``.
    q : growth exponent of the Hamiltonian in the gradient.  q >= 1; the
        value 1 is admitted for eikonal-type runs, though moment diagnostics
        that divide by q - 1 then require sigma to vanish.
    lambda1 : structural upper constant, >= 1.  Must dominate the realized
        coefficient sizes (checked after sampling).
    lambda2 : bound on |sigma| and Lip(sigma), >= 0.
    a0, v0 : constant values of a and V when the model leaves them constant.
    a_range, v_range : (lo, hi) ranges for spatially varying a and V
        (checkerboard and spectral models only).
    bump_height, bump_radius, intensity : shot-noise parameters; bumps per
        unit volume is ``intensity``.
    sigma0 : sigma(y) = sigma0 * I (constant).
    b0 : constant drift vector, or None for zero.
    spectral_exponent, corr_length : spectral-field filter parameters.
    checker_smoothing : mollification length for the checkerboard model.
    seed : default seed used when sample_environment is not given one.
    """

    d: int
    model: str
    L: float
    h: float
    hamiltonian: str = "power-model"
    q: float = 2.0
    lambda1: float = 1.0
    lambda2: float = 0.0
    a0: float = 1.0
    v0: float = 0.0
    a_range: tuple[float, float] | None = None
    v_range: tuple[float, float] | None = None
    bump_height: float = 1.0
    bump_radius: float = 1.0
    intensity: float = 0.05
    sigma0: float = 0.0
    b0: tuple[float, ...] | None = None
    spectral_exponent: float = 3.0
    corr_length: float = 1.0
    checker_smoothing: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.model not in MODELS:
            raise ConfigurationError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.hamiltonian not in HAMILTONIANS:
            raise ConfigurationError(
                f"unknown hamiltonian {self.hamiltonian!r}; expected one of {HAMILTONIANS}"
            )
        if self.L <= 0 or self.h <= 0:
            raise ConfigurationError("L and h must be positive")
        n = self.L / self.h
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigurationError(f"L/h must be an integer, got {self.L}/{self.h} = {n}")
        if round(n) < 4:
            raise ConfigurationError("grid must have at least 4 nodes per axis")
        if self.q < 1.0:
            raise ConfigurationError(f"q must be >= 1, got {self.q}")
        if self.lambda1 < 1.0:
            raise ConfigurationError(f"lambda1 must be >= 1, got {self.lambda1}")
        if self.lambda2 < 0.0:
            raise ConfigurationError("lambda2 must be >= 0")
        if self.a0 <= 0:
            raise ConfigurationError("a0 must be positive")
        if self.v0 < 0:
            raise ConfigurationError("v0 must be >= 0")
        for name, rng_ in (("a_range", self.a_range), ("v_range", self.v_range)):
            if rng_ is not None:
                lo, hi = rng_
                if not (0 < hi if name == "a_range" else 0 <= hi) or lo > hi:
                    raise ConfigurationError(f"{name} must satisfy 0 <(=) lo <= hi, got {rng_}")
                if lo <= 0 and name == "a_range":
                    raise ConfigurationError("a_range lower bound must be positive")
                if lo < 0:
                    raise ConfigurationError(f"{name} lower bound must be >= 0")
                if self.model in ("constant", "shot-noise-potential"):
                    raise ConfigurationError(f"{name} is not supported by model {self.model!r}")
        if self.model == "shot-noise-potential":
            if self.bump_height < 0 or self.intensity < 0:
                raise ConfigurationError("bump_height and intensity must be >= 0")
            if not (0 < self.bump_radius <= self.L / 2):
                raise ConfigurationError("bump_radius must lie in (0, L/2]")
        if self.model == "smoothed-checkerboard":
            cells = round(self.L)
            if abs(self.L - cells) > 1e-9 or cells < 2:
                raise ConfigurationError("checkerboard model needs an integer period L >= 2")
        if self.b0 is not None and len(self.b0) != self.d:
            raise ConfigurationError(f"b0 must have length d={self.d}")

    @property
    def n_nodes(self) -> int:
        return int(round(self.L / self.h))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k in ("a_range", "v_range", "b0"):
            if out[k] is not None:
                out[k] = list(out[k])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EnvSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown EnvSpec keys: {sorted(unknown)}")
        data = dict(data)
        for k in ("a_range", "v_range", "b0"):
            if data.get(k) is not None:
                data[k] = tuple(data[k])
        return cls(**data)


def load_env_spec(path) -> EnvSpec:
    """Read an EnvSpec from a JSON configuration file."""
    with open(path, "r", encoding="utf-8") as fh:
        return EnvSpec.from_dict(json.load(fh))


@dataclass(frozen=True)
class LocalBounds:
    """Structural constants certified on a ball of given radius.

    a_R in (0, 1] and M_R >= 1 realize the coercivity sandwich
    a_R |p|^q - M_R <= H(p, y) <= lambda1 (|p|^q + 1) on the ball, and M_R
    also dominates the spatial modulus (lambda1 |p|^q + M_R) |y - z|.
    """

    radius: float
    a_R: float
    M_R: float


@dataclass(frozen=True)
class CoefficientSet:
    """Realized coefficient fields of one environment on the torus grid.

    Node i of axis k sits at coordinate i * h; the period is L = n * h.
    ``origin`` is an accumulated continuous translation applied at evaluation
    time (see :func:`shift`), so field(y) is read from the grids at y + origin.
    """

    spec: EnvSpec
    seed: int
    a: np.ndarray
    V: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    A: np.ndarray
    origin: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def L(self) -> float:
        return self.spec.L

    @property
    def h(self) -> float:
        return self.spec.h

    def grid_axis(self) -> np.ndarray:
        return np.arange(self.spec.n_nodes) * self.spec.h

    def wrap(self, y: np.ndarray) -> np.ndarray:
        return np.mod(y, self.L)

    def field_at(self, arr: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Multilinear periodic interpolation of a node field at points.

        ``pts`` has shape (..., d); trailing dimensions of ``arr`` beyond the
        d grid axes (vector/matrix components) are carried through.
        """
        d, n, h = self.d, self.spec.n_nodes, self.h
        pts = np.asarray(pts, dtype=float)
        scalar = pts.ndim == 1
        p2 = pts.reshape(-1, d)
        u = np.mod(p2 + self.origin[None, :], self.L) / h
        i0 = np.floor(u).astype(np.int64)
        frac = u - i0
        i0 = np.mod(i0, n)
        tail = arr.shape[d:]
        out = np.zeros((p2.shape[0],) + tail)
        for corner in itertools.product((0, 1), repeat=d):
            wgt = np.ones(p2.shape[0])
            idx = []
            for ax, c in enumerate(corner):
                wgt = wgt * (frac[:, ax] if c else 1.0 - frac[:, ax])
                idx.append(np.mod(i0[:, ax] + c, n))
            out += wgt.reshape(-1, *([1] * len(tail))) * arr[tuple(idx)]
        if scalar:
            return out[0]
        return out.reshape(pts.shape[:-1] + tail)

    def save(self, path_base: str) -> None:
        save_coefficient_set(self, path_base)


def evaluate_H(coeffs: CoefficientSet, p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate the Hamiltonian H(p, y) with interpolated coefficients.

    Broadcasts over leading axes: p and y may be (d,) vectors or (..., d)
    arrays of matching shape.
    """
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape:
        p, y = np.broadcast_arrays(p, y)
    if coeffs.spec.hamiltonian == "power-model":
        a = coeffs.field_at(coeffs.a, y)
        V = coeffs.field_at(coeffs.V, y)
        pn = np.sqrt(np.sum(p * p, axis=-1))
        return a * pn ** coeffs.spec.q - V
    A = coeffs.field_at(coeffs.A, y)
    b = coeffs.field_at(coeffs.b, y)
    V = coeffs.field_at(coeffs.V, y)
    quad = np.einsum("...i,...ij,...j->...", p, A, p)
    return quad + np.einsum("...i,...i->...", b, p) - V


def shift(coeffs: CoefficientSet, z: np.ndarray) -> CoefficientSet:
    """Translate the environment: the result's fields at y equal the old at y + z.

    Grid-aligned components are realized by index rotation; fractional parts
    accumulate in ``origin`` so that shifting by z and then -z restores the
    original arrays bit for bit.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (coeffs.d,):
        raise ConfigurationError(f"shift vector must have shape ({coeffs.d},)")
    h = coeffs.h
    arrays = {"a": coeffs.a, "V": coeffs.V, "b": coeffs.b, "sigma": coeffs.sigma, "A": coeffs.A}
    origin = coeffs.origin.copy()
    for ax in range(coeffs.d):
        steps = z[ax] / h
        k = int(round(steps))
        if abs(steps - k) < 1e-9:
            if k != 0:
                arrays = {name: np.roll(arr, -k, axis=ax) for name, arr in arrays.items()}
        else:
            origin[ax] += z[ax]
    meta = dict(coeffs.meta)
    if "centers" in meta and len(meta["centers"]):
        meta = dict(meta)
        meta["centers"] = np.mod(np.asarray(meta["centers"]) - z[None, :], coeffs.L)
    return CoefficientSet(
        spec=coeffs.spec, seed=coeffs.seed, origin=origin, meta=meta, **arrays
    )


# ---------------------------------------------------------------------------
# sampling


def bump_profile(u2: np.ndarray) -> np.ndarray:
    """Standard compactly supported mollifier, u2 = |u|^2, peak value 1 at 0."""
    out = np.zeros_like(u2)
    inside = u2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u2[inside]))
    return out


def _node_mesh(spec: EnvSpec) -> list[np.ndarray]:
    ax = np.arange(spec.n_nodes) * spec.h
    return np.meshgrid(*([ax] * spec.d), indexing="ij")


def _sample_shot_noise(spec: EnvSpec, seed: int) -> tuple[np.ndarray, dict]:
    n, d, L, h, r = spec.n_nodes, spec.d, spec.L, spec.h, spec.bump_radius
    count = int(_rng(seed, _STREAM_COUNT).poisson(spec.intensity * L**d))
    phase = _rng(seed, _STREAM_PHASE).uniform(0.0, L, size=d)
    centers = np.zeros((count, d))
    heights = np.zeros(count)
    for i in range(count):
        g = _rng(seed, _STREAM_BUMP_BASE + i)
        centers[i] = g.uniform(0.0, L, size=d)
        heights[i] = spec.bump_height
    centers = np.mod(centers - phase[None, :], L)
    V = np.zeros((n,) * d)
    half = int(np.ceil(r / h)) + 1
    for c, amp in zip(centers, heights):
        i0 = np.floor(c / h).astype(int)
        offsets = [np.arange(i0[ax] - half, i0[ax] + half + 1) for ax in range(d)]
        coords = [off * h for off in offsets]
        mesh = np.meshgrid(*coords, indexing="ij")
        u2 = sum((m - c[ax]) ** 2 for ax, m in enumerate(mesh)) / r**2
        win = bump_profile(u2) * amp
        idx = np.ix_(*[np.mod(off, n) for off in offsets])
        np.add.at(V, idx, win)
    meta = {"centers": centers, "heights": heights, "phase": phase}
    return V, meta


def _smooth_unit_field(spec: EnvSpec, seed: int, stream: int) -> np.ndarray:
    """A stationary random field on the torus grid with values in [0, 1]."""
    n, d = spec.n_nodes, spec.d
    if spec.model == "smoothed-checkerboard":
        cells = int(round(spec.L))
        vals = np.zeros((cells,) * d)
        for flat, idx in enumerate(itertools.product(range(cells), repeat=d)):
            vals[idx] = _rng(seed, stream * 1_000_000 + flat).uniform()
        phase = _rng(seed, _STREAM_PHASE).uniform(0.0, 1.0, size=d)
        mesh = _node_mesh(spec)
        raw = vals[tuple(np.mod(np.floor(m + phase[ax]).astype(int), cells) for ax, m in enumerate(mesh))]
        return ndimage.gaussian_filter(raw, sigma=spec.checker_smoothing / spec.h, mode="wrap")
    # spectral synthesis: filtered white noise, analytically normalized
    white = _rng(seed, stream).standard_normal((n,) * d)
    k1 = 2.0 * np.pi * np.fft.fftfreq(n, d=spec.h)
    k2 = sum(np.meshgrid(*([k1**2] * d), indexing="ij"))
    kappa = 2.0 * np.pi / spec.corr_length
    filt = (k2 + kappa**2) ** (-spec.spectral_exponent / 2.0)
    g = np.fft.ifftn(np.fft.fftn(white) * filt).real
    g /= np.sqrt(np.mean(filt**2))
    return 0.5 * (1.0 + np.tanh(0.5 * g))


def _edge_lipschitz(field_arr: np.ndarray, h: float, d: int) -> np.ndarray:
    """Per-node bound on the local Lipschitz constant of the interpolated field.

    Trailing (component) axes are reduced with an l2 norm so the result bounds
    the vector-valued Lipschitz constant.
    """
    comps = field_arr.reshape(field_arr.shape[:d] + (-1,))
    total = np.zeros(field_arr.shape[:d])
    for ax in range(d):
        sl = np.abs(np.roll(comps, -1, axis=ax) - comps) / h
        sl = np.sqrt(np.sum(sl**2, axis=-1))
        total += np.maximum(sl, np.roll(sl, 1, axis=ax)) ** 2
    return np.sqrt(total)


def sample_environment(spec: EnvSpec, seed: int | None = None) -> CoefficientSet:
    """Draw one realization of the coefficient fields.

    Deterministic in (spec, seed).  Raises ConfigurationError when the
    realized fields violate the structural constants lambda1 / lambda2.
    """
    if seed is None:
        seed = spec.seed
    n, d = spec.n_nodes, spec.d
    shape = (n,) * d
    meta: dict = {}

    a = np.full(shape, float(spec.a0))
    V = np.full(shape, float(spec.v0))
    if spec.model == "shot-noise-potential":
        Vs, meta = _sample_shot_noise(spec, seed)
        V = V + Vs
    elif spec.model in ("smoothed-checkerboard", "spectral-field"):
        if spec.a_range is not None:
            lo, hi = spec.a_range
            a = lo + (hi - lo) * _smooth_unit_field(spec, seed, _STREAM_FIELD_A)
        if spec.v_range is not None:
            lo, hi = spec.v_range
            V = V + lo + (hi - lo) * _smooth_unit_field(spec, seed, _STREAM_FIELD_V)

    eye = np.eye(d)
    sigma = np.broadcast_to(spec.sigma0 * eye, shape + (d, d)).copy()
    A = 0.5 * np.einsum("...ki,...kj->...ij", sigma, sigma)
    b = np.zeros(shape + (d,))
    if spec.b0 is not None:
        b[...] = np.asarray(spec.b0, dtype=float)

    _validate_realization(spec, a, V, b, sigma, A)
    return CoefficientSet(
        spec=spec, seed=int(seed), a=a, V=V, b=b, sigma=sigma, A=A,
        origin=np.zeros(d), meta=meta,
    )


def _validate_realization(spec, a, V, b, sigma, A):
    d = spec.d
    if np.any(a <= 0):
        raise ConfigurationError("realized a(y) must be positive everywhere")
    if np.any(V < 0):
        raise ConfigurationError("realized V(y) must be nonnegative")
    sig_norm = np.sqrt(np.sum(sigma**2, axis=(-2, -1)))
    if np.any(sig_norm > spec.lambda2 + 1e-12):
        raise ConfigurationError(
            f"|sigma| = {sig_norm.max():.6g} exceeds lambda2 = {spec.lambda2}; raise lambda2"
        )
    lip_sigma = _edge_lipschitz(sigma, spec.h, d).max()
    if lip_sigma > spec.lambda2 + 1e-9:
        raise ConfigurationError("Lip(sigma) exceeds lambda2")
    if spec.hamiltonian == "power-model":
        if a.max() > spec.lambda1 + 1e-12:
            raise ConfigurationError(
                f"max a = {a.max():.6g} exceeds lambda1 = {spec.lambda1}; raise lambda1"
            )
        if _edge_lipschitz(a, spec.h, d).max() > spec.lambda1 + 1e-9:
            raise ConfigurationError("Lip(a) exceeds lambda1; smooth the field or raise lambda1")
    else:
        a_op = np.linalg.eigvalsh(A)[..., -1]
        b_norm = np.sqrt(np.sum(b**2, axis=-1))
        need = (a_op + b_norm).max()
        if need > spec.lambda1 + 1e-12:
            raise ConfigurationError(
                f"|A| + |b| = {need:.6g} exceeds lambda1 = {spec.lambda1}; raise lambda1"
            )


# ---------------------------------------------------------------------------
# structural bounds and diagnostics


def _ball_mask(coeffs: CoefficientSet, R: float, center) -> np.ndarray:
    d, L = coeffs.d, coeffs.L
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    mesh = _node_mesh(coeffs.spec)
    dist2 = np.zeros_like(mesh[0])
    for ax in range(d):
        delta = np.abs(np.mod(mesh[ax] + coeffs.origin[ax] - center[ax], L))
        delta = np.minimum(delta, L - delta)
        dist2 += delta**2
    collar = coeffs.h * np.sqrt(d)
    return dist2 <= (R + collar) ** 2


def _quad_lambda_bounds(coeffs: CoefficientSet):
    w = np.linalg.eigvalsh(coeffs.A)
    return w[..., 0], w[..., -1]


def local_bounds(coeffs: CoefficientSet, R: float, center=None) -> LocalBounds:
    """Certify the coercivity sandwich constants on the ball B_R(center).

    The scan covers grid nodes within R plus an interpolation collar, so the
    certified constants are conservative at interpolated points as well
    (H is affine in the interpolated fields for both Hamiltonian families).
    a_R never exceeds the true largest admissible constant; M_R never falls
    below the smallest.
    """
    if R < 1.0:
        raise DomainError(f"radius must be >= 1, got {R}")
    if R > coeffs.L / 2.0 + 1e-12:
        raise DomainError(
            f"radius {R} exceeds half the torus period {coeffs.L / 2.0}")
    return _bounds_on_mask(coeffs, R, _ball_mask(coeffs, R, center))


def _bounds_on_mask(coeffs: CoefficientSet, R: float,
                    mask: np.ndarray) -> LocalBounds:
    # shared body for the public ball scan and the internal whole-torus
    # variants, which legitimately exceed the half-period radius cap
    spec = coeffs.spec
    lipV = _edge_lipschitz(coeffs.V, spec.h, spec.d)[mask].max() if mask.any() else 0.0
    Vmax = coeffs.V[mask].max()
    if spec.hamiltonian == "power-model":
        a_R = min(1.0, float(coeffs.a[mask].min()))
        M_R = max(1.0, float(Vmax), float(lipV))
        return LocalBounds(radius=float(R), a_R=a_R, M_R=M_R)
    lam_lo, _ = _quad_lambda_bounds(coeffs)
    lam = lam_lo[mask]
    b_norm = np.sqrt(np.sum(coeffs.b**2, axis=-1))[mask]
    if lam.min() <= 0 and b_norm.max() > 0:
        raise ConfigurationError(
            "degenerate diffusion with nonzero drift admits no coercivity constants"
        )
    if b_norm.max() == 0:
        a_R = min(1.0, float(lam.min())) if lam.min() > 0 else 0.0
        young = 0.0
    else:
        a_R = min(1.0, float(lam.min()) / 2.0)
        young = float((0.5 * b_norm**2 / np.maximum(lam, 1e-300)).max())
    if a_R <= 0:
        raise ConfigurationError("quadratic-drift model needs positive definite A for bounds")
    lipb = _edge_lipschitz(coeffs.b, spec.h, spec.d)[mask].max()
    M_R = max(1.0, float(Vmax + young), float(lipV + 0.5 * lipb))
    return LocalBounds(radius=float(R), a_R=a_R, M_R=M_R)


def weak_coercivity_diagnostic(coeffs: CoefficientSet, alpha: float) -> float:
    """Spatial-average estimate of the weak coercivity moment.

    Averages (lambda2 / a_1(y))^(2 alpha / (q-1)) + (M_1(y) / a_1(y))^(alpha / q)
    over torus nodes, where a_1, M_1 are the radius-1 local bounds centered at
    each node.  Requires alpha > d.  Warns when the average is dominated by
    the top decile of nodes (heavy-tail / divergence risk).
    """
    spec = coeffs.spec
    if alpha <= spec.d:
        raise ConfigurationError(f"alpha must exceed the dimension d={spec.d}")
    if spec.q <= 1.0 and spec.lambda2 > 0:
        raise ConfigurationError("q must exceed 1 when sigma is nonzero (exponent 2a/(q-1))")
    h, d = spec.h, spec.d
    r_nodes = int(np.ceil((1.0 + h * np.sqrt(d)) / h))
    idx = np.indices((2 * r_nodes + 1,) * d) - r_nodes
    fp = (np.sum(idx**2, axis=0) <= r_nodes**2)

    lipV = _edge_lipschitz(coeffs.V, h, d)
    Vmax = ndimage.maximum_filter(coeffs.V, footprint=fp, mode="wrap")
    lipmax = ndimage.maximum_filter(lipV, footprint=fp, mode="wrap")
    if spec.hamiltonian == "power-model":
        a1 = np.minimum(1.0, ndimage.minimum_filter(coeffs.a, footprint=fp, mode="wrap"))
        M1 = np.maximum(1.0, np.maximum(Vmax, lipmax))
    else:
        lam_lo, _ = _quad_lambda_bounds(coeffs)
        lam1 = ndimage.minimum_filter(lam_lo, footprint=fp, mode="wrap")
        b_norm = np.sqrt(np.sum(coeffs.b**2, axis=-1))
        if b_norm.max() == 0:
            if lam1.min() <= 0:
                raise ConfigurationError("degenerate A: weak coercivity moment undefined")
            a1 = np.minimum(1.0, lam1)
            young = 0.0
        else:
            if lam1.min() <= 0:
                raise ConfigurationError("degenerate A with drift: moment undefined")
            a1 = np.minimum(1.0, lam1 / 2.0)
            young = ndimage.maximum_filter(
                0.5 * b_norm**2 / np.maximum(lam_lo, 1e-300), footprint=fp, mode="wrap"
            )
        M1 = np.maximum(1.0, np.maximum(Vmax + young, lipmax))

    if spec.lambda2 > 0:
        term1 = (spec.lambda2 / a1) ** (2.0 * alpha / (spec.q - 1.0))
    else:
        term1 = np.zeros_like(a1)
    term2 = (M1 / a1) ** (alpha / spec.q)
    values = (term1 + term2).ravel()
    total = values.sum()
    top = np.sort(values)[::-1][: max(1, values.size // 10)].sum()
    if total > 0 and top > 0.5 * total:
        warnings.warn(
            "weak coercivity moment dominated by top decile of sites; "
            "the environment may fail the integrability hypothesis",
            RuntimeWarning,
        )
    return float(values.mean())


# ---------------------------------------------------------------------------
# persistence: binary grid container with JSON sidecar


def save_coefficient_set(coeffs: CoefficientSet, path_base: str) -> None:
    """Write fields to <base>.npz and provenance to <base>.json."""
    np.savez_compressed(
        f"{path_base}.npz",
        a=coeffs.a, V=coeffs.V, b=coeffs.b, sigma=coeffs.sigma, origin=coeffs.origin,
        **{f"meta_{k}": np.asarray(v) for k, v in coeffs.meta.items()},
    )
    sidecar = {
        "d": coeffs.d, "L": coeffs.L, "h": coeffs.h,
        "model": coeffs.spec.model, "seed": coeffs.seed,
        "spec": coeffs.spec.to_dict(),
    }
    with open(f"{path_base}.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_coefficient_set(path_base: str) -> CoefficientSet:
    with open(f"{path_base}.json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    spec = EnvSpec.from_dict(sidecar["spec"])
    data = np.load(f"{path_base}.npz")
    sigma = data["sigma"]
    A = 0.5 * np.einsum("...ki,...kj->...ij", sigma, sigma)
    meta = {k[5:]: data[k] for k in data.files if k.startswith("meta_")}
    return CoefficientSet(
        spec=spec, seed=int(sidecar["seed"]), a=data["a"], V=data["V"], b=data["b"],
        sigma=sigma, A=A, origin=data["origin"], meta=meta,
    )
