"""Quadrature reference solution for 1D diffusion-free cell problems.

For d = 1 and A = 0 the stationary cell problem H(p + v'(x), x) = mu is
solved exactly by picking v'(x) on the level set {H(., x) = mu} subject to
the zero-mean constraint over one period.  The level set of the power model
a(x)|r|^q - V(x) = mu is a pair of branch roots r_-(x) <= 0 <= r_+(x), and
the admissible momenta at level mu form the interval

    [F_-(mu), F_+(mu)],   F_pm(mu) = period average of r_pm(., mu).

Inverting mu -> F gives the effective Hamiltonian; the interval endpoints
are the one-sided effective metric slopes.  Everything here is plain
quadrature on the coefficient fields and is independent of the grid
solvers, which is the point: it anchors their acceptance tests.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from .environment import CoefficientSet
from .errors import ConfigurationError, DomainError

_N_QUAD = 4096


def _check_oracle_domain(coeffs: CoefficientSet) -> None:
    if coeffs.d != 1:
        raise ConfigurationError("quadrature oracle is one-dimensional only")
    if coeffs.spec.hamiltonian != "power-model":
        raise ConfigurationError("quadrature oracle requires the power model")
    if float(np.abs(coeffs.sigma).max()) > 0.0:
        raise ConfigurationError("quadrature oracle requires zero diffusion")


def _sample_fields(coeffs: CoefficientSet, n_quad: int):
    # midpoint samples over one period; exact period average for the
    # piecewise-linear node fields when n_quad is a multiple of the grid
    x = (np.arange(n_quad) + 0.5) * (coeffs.L / n_quad)
    pts = x[:, None]
    return coeffs.field_at(coeffs.a, pts), coeffs.field_at(coeffs.V, pts)


def hstar_1d(coeffs: CoefficientSet) -> float:
    """Critical level: the smallest mu with nonempty level sets everywhere.

    Equals -min V because min_r H(r, x) = -V(x) for the power model and
    multilinear interpolation attains its minimum at a node.
    """
    _check_oracle_domain(coeffs)
    return float(-coeffs.V.min())


def branch_roots(coeffs: CoefficientSet, mu: float, x: np.ndarray):
    """Roots r_-(x) <= r_+(x) of a(x)|r|^q - V(x) = mu, vectorized in x."""
    _check_oracle_domain(coeffs)
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 1)
    a = coeffs.field_at(coeffs.a, pts)
    V = coeffs.field_at(coeffs.V, pts)
    arg = (mu + V) / a
    if np.any(arg < -1e-12):
        raise DomainError("level below the pointwise minimum of H: no roots")
    r = np.maximum(arg, 0.0) ** (1.0 / coeffs.spec.q)
    return (-r).reshape(x.shape), r.reshape(x.shape)


def level_interval(coeffs: CoefficientSet, mu: float, n_quad: int = _N_QUAD):
    """Admissible momentum interval [F_-(mu), F_+(mu)] at level mu."""
    _check_oracle_domain(coeffs)
    if mu < hstar_1d(coeffs) - 1e-12:
        raise DomainError("level below the critical value")
    a, V = _sample_fields(coeffs, n_quad)
    r = np.maximum((mu + V) / a, 0.0) ** (1.0 / coeffs.spec.q)
    return float(-r.mean()), float(r.mean())


def mbar_1d(coeffs: CoefficientSet, mu: float, n_quad: int = _N_QUAD):
    """Effective metric slopes (mbar(-1), mbar(+1)) at level mu.

    By support-function duality mbar_mu(+1) = F_+(mu) and
    mbar_mu(-1) = -F_-(mu); for the symmetric power model the two agree.
    """
    flo, fhi = level_interval(coeffs, mu, n_quad)
    return -flo, fhi


def hbar_1d(coeffs: CoefficientSet, p: float, n_quad: int = _N_QUAD,
            xtol: float = 1e-12) -> float:
    """Effective Hamiltonian at momentum p by bisecting the branch average.

    Returns the critical level on the flat piece F_-(H*) <= p <= F_+(H*),
    otherwise the unique mu with F_+(mu) = p (or F_-(mu) = p for p on the
    negative side).
    """
    _check_oracle_domain(coeffs)
    p = float(p)
    hstar = hstar_1d(coeffs)
    flo, fhi = level_interval(coeffs, hstar, n_quad)
    if flo <= p <= fhi:
        return hstar

    if p > fhi:
        def g(mu):
            return level_interval(coeffs, mu, n_quad)[1] - p
    else:
        def g(mu):
            return p - level_interval(coeffs, mu, n_quad)[0]

    hi = hstar + 1.0
    while g(hi) < 0.0:
        hi = hstar + 2.0 * (hi - hstar)
        if hi - hstar > 1e12:
            raise DomainError("no finite level matches p: check coercivity")
    return float(brentq(g, hstar, hi, xtol=xtol))
