"""The 1D quadrature oracle checked against closed forms.

The oracle anchors the acceptance tests of the grid solvers, so it gets its
own closed-form verification on constant potentials where every quantity is
available analytically.
"""

import numpy as np
import pytest

from hjhomog import environment as env, oracle1d
from hjhomog.errors import ConfigurationError, DomainError


def _const_env(c=0.3, q=2.0):
    spec = env.EnvSpec(d=1, model="constant", L=2.0, h=0.01,
                       hamiltonian="power-model", q=q, a0=1.0, v0=c,
                       lambda1=2.0)
    return env.sample_environment(spec, seed=0)


def test_constant_potential_closed_forms():
    c = 0.3
    co = _const_env(c)
    assert oracle1d.hstar_1d(co) == -c
    lo, hi = oracle1d.level_interval(co, 1.0)
    assert hi == pytest.approx(np.sqrt(1.0 + c), abs=1e-12)
    assert lo == pytest.approx(-np.sqrt(1.0 + c), abs=1e-12)
    for p in (0.0, 0.5, 1.7, -2.3):
        assert oracle1d.hbar_1d(co, p) == pytest.approx(p * p - c, abs=1e-9)


def test_constant_potential_q3():
    c, q = 0.5, 3.0
    co = _const_env(c, q=q)
    for p in (0.7, 1.9):
        assert oracle1d.hbar_1d(co, p) == pytest.approx(abs(p) ** q - c, abs=1e-9)


def test_branch_roots_formula(env1d_smooth):
    co = env1d_smooth
    x = np.linspace(0.0, co.L, 17)
    mu = 1.2
    lo, hi = oracle1d.branch_roots(co, mu, x)
    V = co.field_at(co.V, x[:, None])
    a = co.field_at(co.a, x[:, None])
    np.testing.assert_allclose(hi, ((mu + V) / a) ** 0.5, atol=1e-12)
    np.testing.assert_allclose(lo, -hi, atol=1e-12)
    with pytest.raises(DomainError):
        oracle1d.branch_roots(co, -co.V.max() - 0.5, x)


def test_level_interval_quadrature_converges(env1d_smooth):
    co = env1d_smooth
    coarse = oracle1d.level_interval(co, 0.7, n_quad=512)
    fine = oracle1d.level_interval(co, 0.7, n_quad=8192)
    assert abs(coarse[1] - fine[1]) < 1e-6


def test_flat_piece_and_monotonicity(env1d_smooth):
    co = env1d_smooth
    hstar = oracle1d.hstar_1d(co)
    flo, fhi = oracle1d.level_interval(co, hstar)
    # interior of the flat piece maps to the critical level exactly
    assert oracle1d.hbar_1d(co, 0.5 * fhi) == hstar
    assert oracle1d.hbar_1d(co, 0.0) == hstar
    ps = np.linspace(0.0, 3.0, 25)
    vals = [oracle1d.hbar_1d(co, p) for p in ps]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    # convexity along the sampled ray
    second = np.diff(vals, 2)
    assert second.min() > -1e-8


def test_inverse_consistency(env1d_smooth):
    # hbar and the level interval are inverse maps outside the flat piece
    co = env1d_smooth
    mu = 0.9
    _, fhi = oracle1d.level_interval(co, mu)
    assert oracle1d.hbar_1d(co, fhi) == pytest.approx(mu, abs=1e-9)


def test_oracle_domain_guards(env2d_shot, env1d_smooth):
    with pytest.raises(ConfigurationError):
        oracle1d.hbar_1d(env2d_shot, 1.0)
    spec = env.EnvSpec(d=1, model="constant", L=2.0, h=0.01,
                       hamiltonian="quadratic-drift-model", sigma0=1.0,
                       lambda2=1.5, lambda1=2.0)
    co = env.sample_environment(spec, seed=0)
    with pytest.raises(ConfigurationError):
        oracle1d.hstar_1d(co)
