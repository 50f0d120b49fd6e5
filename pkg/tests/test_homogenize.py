"""Effective Hamiltonian estimation: metric route, cell route, audits."""

import numpy as np
import pytest

from hjhomog import environment as env, homogenize as hom, oracle1d
from hjhomog.errors import ConfigurationError, DomainError

_LADDER_1D = [8.0, 16.0, 32.0]
_EPS_1D = [0.5, 0.25, 0.125]


@pytest.fixture(scope="module")
def mbar1d(env1d_smooth):
    hstar = oracle1d.hstar_1d(env1d_smooth)
    mus = [hstar + 0.02, 0.1, 0.5, 1.0, 2.0, 4.0, 6.5, 9.5]
    return hom.build_mbar_table(env1d_smooth, mus, R_ladder=_LADDER_1D, h=0.01)


def test_sphere_directions_shapes():
    d1 = hom.sphere_directions(1, 5)
    assert d1.shape == (2, 1)
    d2 = hom.sphere_directions(2, 12)
    assert d2.shape == (12, 2)
    np.testing.assert_allclose(np.linalg.norm(d2, axis=1), 1.0, atol=1e-12)
    d3 = hom.sphere_directions(3, 50)
    np.testing.assert_allclose(np.linalg.norm(d3, axis=1), 1.0, atol=1e-12)
    with pytest.raises(ConfigurationError):
        hom.sphere_directions(4, 10)


def test_mbar_matches_1d_quadrature(env1d_smooth, mbar1d):
    for i, mu in enumerate(mbar1d.mus):
        want = oracle1d.mbar_1d(env1d_smooth, float(mu))[1]
        got = float(mbar1d.values[i, 0])
        assert abs(got - want) <= 0.03 * max(1.0, want)


def test_mbar_monotone_and_concave_in_mu(mbar1d):
    vals = mbar1d.values[:, 0]
    assert np.all(np.diff(vals) > 0.0)
    # concavity in mu: nonuniform grid second differences via divided diffs
    mus = mbar1d.mus
    slopes = np.diff(vals) / np.diff(mus)
    assert np.all(np.diff(slopes) <= 1e-9)


def test_mbar_ladder_error_is_honest(env1d_smooth, mbar1d):
    # declared error bounds the gap to a longer-ladder rerun
    est = hom.estimate_mbar(env1d_smooth, 1.0, np.array([1.0]),
                            R_ladder=[8.0, 16.0, 32.0, 64.0], h=0.01)
    i = int(np.argmin(np.abs(mbar1d.mus - 1.0)))
    gap = abs(est.value - mbar1d.values[i, 0])
    assert gap <= mbar1d.errors[i, 0] + est.error + 1e-6


def test_metric_route_matches_oracle(env1d_smooth, mbar1d):
    for p in (0.0, 0.4, 0.9, 1.8, 3.0, -2.4):
        got = hom.estimate_Hbar_metric(mbar1d, np.array([p]))
        want = oracle1d.hbar_1d(env1d_smooth, p)
        assert abs(got - want) <= 0.03 * max(1.0, abs(want))


def test_cell_route_matches_oracle(env1d_smooth):
    for p in (0.0, 0.9, 1.8, -2.4):
        got = hom.estimate_Hbar_cell(env1d_smooth, np.array([p]), _EPS_1D)
        want = oracle1d.hbar_1d(env1d_smooth, p)
        assert abs(got - want) <= 0.03 * max(1.0, abs(want))


def test_cell_ladder_needs_two_rates(env1d_smooth):
    with pytest.raises(ConfigurationError):
        hom.cell_ladder(env1d_smooth, np.array([0.0]), [0.25])


def test_hstar_bisection_brackets_oracle(env1d_smooth):
    want = oracle1d.hstar_1d(env1d_smooth)
    # A cold sweep covers about three nodes per cycle, so the 1601-node
    # line needs a budget well past the 200-cycle default.
    est = hom.estimate_Hstar(env1d_smooth, (want - 0.3, want + 0.4),
                             half_width=8.0, h=0.01, max_cycles=2000)
    assert est.lo - 1e-9 <= want <= est.hi + 1e-9
    assert est.width <= 0.011
    assert abs(est.value - want) <= est.width


def test_effective_table_roundtrip(tmp_path, env1d_smooth, mbar1d):
    axis = np.linspace(-2.0, 2.0, 9)
    table = hom.build_effective_table(env1d_smooth, (axis,),
                                      mbar_table=mbar1d, eps_ladder=_EPS_1D)
    base = tmp_path / "table"
    table.save(base)
    back = hom.load_effective_table(f"{base}.csv")
    np.testing.assert_array_equal(back.route("metric"), table.route("metric"))
    np.testing.assert_array_equal(back.route("cell"), table.route("cell"))
    np.testing.assert_array_equal(back.p_axes[0], axis)
    with pytest.raises(ConfigurationError):
        table.route("fastest")


def test_audit_constant_table_clean(env2d_const):
    axis = np.arange(-1.0, 1.01, 0.5)
    mus = [0.03, 0.25, 1.0, 2.25, 4.25]
    mtab = hom.build_mbar_table(env2d_const, mus, R_ladder=[4.0, 8.0, 16.0],
                                h=0.1)
    table = hom.build_effective_table(env2d_const, (axis, axis),
                                      mbar_table=mtab,
                                      eps_ladder=[0.5, 0.25])
    audit = hom.audit_effective_table(table, route_tol=0.06)
    assert audit.passed
    assert audit.convexity_violations == ()
    assert audit.bound_violations == ()


def test_audit_flags_injected_fault(env2d_const):
    axis = np.arange(-1.0, 1.01, 0.5)
    table = hom.build_effective_table(env2d_const, (axis, axis),
                                      eps_ladder=[0.5, 0.25])
    vals = table.route("cell").copy()
    vals[2, 2] += 0.5  # corrupt the center entry
    broken = hom.EffectiveTable(p_axes=table.p_axes, hbar_metric=None,
                                err_metric=None, hbar_cell=vals,
                                err_cell=table.err_cell, hstar=None,
                                spec=table.spec, seed=table.seed)
    audit = hom.audit_effective_table(broken)
    assert not audit.passed
    # A bump at (2, 2) dents the centered second difference one slot
    # upstream along each axis.
    spots = {(ax, idx) for _, ax, idx, _ in audit.convexity_violations}
    assert (0, (1, 2)) in spots
    assert (1, (2, 1)) in spots
    assert audit.worst_second_difference < -0.4


def test_support_function_reads_table(env2d_const):
    # Constant coefficients give Hbar(p) = |p|^2 on the cell route, so the
    # discrete sup{p.y : Hbar(p) <= mu} over the lattice is known exactly.
    axis = np.arange(-1.0, 1.01, 0.5)
    table = hom.build_effective_table(env2d_const, (axis, axis),
                                      eps_ladder=[0.5, 0.25])
    y = np.array([2.0, 0.0])
    # mu = 1.1: sublevel radius 1.048, largest admissible lattice p is 1.0
    assert hom.support_function(table, 1.1, y, route="cell") == \
        pytest.approx(2.0, abs=1e-8)
    # mu = 0.3: radius 0.548, lattice caps at 0.5
    assert hom.support_function(table, 0.3, y, route="cell") == \
        pytest.approx(1.0, abs=1e-8)
    with pytest.raises(DomainError):
        hom.support_function(table, -0.5, y, route="cell")


def test_minmax_dominates_cell_route(env1d_smooth):
    p = np.array([1.2])
    hbar = hom.estimate_Hbar_cell(env1d_smooth, p, _EPS_1D)
    n = env1d_smooth.V.shape[0]
    rng = np.random.default_rng(4)
    for _ in range(5):
        w = rng.normal(scale=0.2, size=n)
        assert hom.minmax_upper_bound(env1d_smooth, p, w) >= hbar - 1e-6
