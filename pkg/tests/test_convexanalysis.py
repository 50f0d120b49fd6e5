"""Discrete duality: conjugates, envelopes, Hopf-Lax, Lagrangian readout."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjhomog import convexanalysis as cvx, homogenize as hom
from hjhomog.errors import ConfigurationError, DomainError


def brute_conjugate(f, z_axes):
    """Double-loop conjugate with the library's left-to-right association."""
    eff = f.effective_values().reshape(-1)
    P = f.points().reshape(-1, f.d)
    keep = np.isfinite(eff)
    P, fv = P[keep], eff[keep]
    mesh = np.meshgrid(*z_axes, indexing="ij")
    Z = np.stack(mesh, axis=-1).reshape(-1, len(z_axes))
    out = np.empty(Z.shape[0])
    for i in range(Z.shape[0]):
        best = -np.inf
        for k in range(P.shape[0]):
            term = Z[i, 0] * P[k, 0]
            for ax in range(1, P.shape[1]):
                term = term + Z[i, ax] * P[k, ax]
            term = term - fv[k]
            if term > best:
                best = term
        out[i] = best
    return out.reshape(tuple(len(ax) for ax in z_axes))


def random_table(rng, d):
    axes = tuple(np.sort(rng.uniform(-3, 3, size=rng.integers(3, 7)))
                 for _ in range(d))
    axes = tuple(ax + np.arange(len(ax)) * 1e-6 for ax in axes)
    vals = rng.normal(scale=2.0, size=tuple(len(ax) for ax in axes))
    return cvx.ConvexTable(axes, vals)


def test_gridfunction_validation():
    with pytest.raises(ConfigurationError):
        cvx.GridFunction((np.array([0.0, 1.0]),), np.zeros(3))
    with pytest.raises(ConfigurationError):
        cvx.GridFunction((np.array([0.0, 0.0, 1.0]),), np.zeros(3))
    g = cvx.GridFunction((np.array([0.0, 1.0, 2.0]),), np.array([0.0, 2.0, 4.0]))
    assert g.interp(np.array([0.75])) == pytest.approx(1.5, abs=1e-14)
    with pytest.raises(DomainError):
        g.interp(np.array([2.5]))


def test_convex_table_rejects_neginf_and_maps_nan():
    with pytest.raises(ConfigurationError):
        cvx.ConvexTable((np.array([0.0, 1.0]),), np.array([-np.inf, 0.0]))
    t = cvx.ConvexTable((np.array([0.0, 1.0]),), np.array([np.nan, 0.0]))
    assert np.isposinf(t.values[0])


def test_conjugate_matches_brute_force_bitwise():
    rng = np.random.default_rng(11)
    for trial in range(12):
        d = 1 + trial % 2
        f = random_table(rng, d)
        z_axes = tuple(np.linspace(-2.5, 2.5, 7) for _ in range(d))
        got = cvx.legendre_transform(f, z_axes)
        want = brute_conjugate(f, z_axes)
        assert np.array_equal(got.values, want)


def test_conjugate_skips_inf_and_flagged_entries():
    axes = (np.array([-1.0, 0.0, 1.0]),)
    vals = np.array([0.0, -5.0, np.inf])
    flags = np.array([False, True, False])
    f = cvx.ConvexTable(axes, vals, flags)
    z = (np.array([-0.5, 0.0, 0.5]),)
    got = cvx.legendre_transform(f, z)
    # only p = -1 survives: the flagged -5 would otherwise dominate at z = 0
    np.testing.assert_array_equal(got.values, [0.5, 0.0, -0.5])


def test_conjugate_of_quadratic_on_half_lattice():
    p = np.linspace(-2.0, 2.0, 17)
    f = cvx.ConvexTable((p,), p ** 2)
    z = 2.0 * p
    got = cvx.legendre_transform(f, (z,))
    np.testing.assert_array_equal(got.values, z ** 2 / 4.0)
    assert not got.flags[4]
    assert got.flags[0] and got.flags[-1]


def test_rim_flag_marks_truncated_sup():
    p = np.linspace(-1.0, 1.0, 5)
    f = cvx.ConvexTable((p,), p ** 2)
    star = cvx.legendre_transform(f, (np.array([-10.0, 0.0, 10.0]),))
    # |z| = 10 exceeds the slope range of f's lattice: sup hits the rim
    assert star.flags[0] and star.flags[2]
    assert not star.flags[1]


def test_biconjugate_is_convex_envelope():
    p = np.array([-1.0, 0.0, 1.0])
    f = cvx.ConvexTable((p,), np.array([0.0, 1.0, 0.0]))
    env = cvx.biconjugate(f, (np.linspace(-1.0, 1.0, 9),))
    np.testing.assert_allclose(env.values, 0.0, atol=1e-12)


@given(seed=st.integers(0, 2 ** 16))
@settings(max_examples=30, deadline=None)
def test_biconjugate_minorizes_and_idempotent(seed):
    rng = np.random.default_rng(seed)
    axes = (np.linspace(-2.0, 2.0, int(rng.integers(4, 9))),)
    f = cvx.ConvexTable(axes, rng.normal(scale=3.0, size=len(axes[0])))
    z_axes = (np.linspace(-6.0, 6.0, 25),)
    g = cvx.biconjugate(f, z_axes)
    assert np.all(g.values <= f.values + 1e-9)
    g2 = cvx.biconjugate(cvx.ConvexTable(g.axes, g.values), z_axes)
    np.testing.assert_allclose(g2.values, g.values, atol=1e-9)
    # Fenchel-Young on the lattice
    star = cvx.legendre_transform(f, z_axes)
    P = f.points().reshape(-1, 1)
    Z = star.points().reshape(-1, 1)
    lhs = f.values.reshape(-1)[:, None] + star.values.reshape(-1)[None, :]
    assert np.all(lhs >= (P @ Z.T) - 1e-12)


def test_evaluate_keeps_raw_values_under_flags():
    axes = (np.array([0.0, 1.0, 2.0]),)
    vals = np.array([0.0, 5.0, 8.0])
    flags = np.array([False, True, False])
    t = cvx.ConvexTable(axes, vals, flags)
    v, fl = t.evaluate(np.array([1.0]))
    assert v == 5.0 and fl
    v, fl = t.evaluate(np.array([0.0]))
    assert v == 0.0 and not fl
    # midpoints of cells touching the flagged node interpolate raw values
    v, fl = t.evaluate(np.array([0.5]))
    assert v == 2.5 and fl


def test_evaluate_extrapolates_and_flags_outside():
    axes = (np.array([0.0, 1.0, 2.0]),)
    t = cvx.ConvexTable(axes, np.array([0.0, 1.0, 4.0]))
    v, fl = t.evaluate(np.array([3.0]))
    assert fl
    assert v == pytest.approx(7.0, abs=1e-12)  # outer slope 3 continued
    assert v <= 9.0  # lower bound for convex data
    v, fl = t.evaluate(np.array([3.0]), extrapolate=False)
    assert fl and v == pytest.approx(4.0, abs=1e-12)


def test_evaluate_inf_cell_is_infinite_and_flagged():
    axes = (np.array([0.0, 1.0, 2.0]),)
    t = cvx.ConvexTable(axes, np.array([0.0, np.inf, 4.0]))
    v, fl = t.evaluate(np.array([0.5]))
    assert np.isinf(v) and fl
    v, fl = t.evaluate(np.array([0.0]))
    assert v == 0.0 and not fl


def test_hopf_lax_quadratic_closed_form():
    z = np.linspace(-6.0, 6.0, 241)
    L = cvx.ConvexTable((z,), z ** 2 / 4.0)
    y = np.linspace(-4.0, 4.0, 321)
    g = cvx.GridFunction((y,), y ** 2)
    for t, x in [(0.5, 0.8), (1.0, -1.2), (2.0, 0.0)]:
        got = cvx.hopf_lax(L, g, np.array([x]), t)
        want = x ** 2 / (1.0 + 4.0 * t)
        assert got == pytest.approx(want, abs=2e-3)
    with pytest.raises(DomainError):
        cvx.hopf_lax(L, g, np.array([0.0]), 0.0)


def test_hopf_lax_infinite_lagrangian_raises():
    z = np.array([-1.0, 0.0, 1.0])
    L = cvx.ConvexTable((z,), np.array([np.inf, np.inf, np.inf]))
    g = cvx.GridFunction((z,), np.zeros(3))
    with pytest.raises(DomainError):
        cvx.hopf_lax(L, g, np.array([0.0]), 1.0)


@pytest.fixture(scope="module")
def mbar_const(env2d_const):
    mus = [0.25, 1.0, 2.25, 4.0]
    return hom.build_mbar_table(env2d_const, mus, R_ladder=[4.0, 8.0, 16.0],
                                h=0.1)


def test_lagrangian_from_mbar_quadratic(mbar_const):
    # H = |p|^2 gives mbar_mu = sqrt(mu) and L(z) = |z|^2 / 4; the level
    # grid contains the maximizing mu = 1 for |z| = 2 exactly.
    z = np.array([2.0, 0.0])
    got = cvx.lagrangian_from_mbar(mbar_const, z)
    assert got.value == pytest.approx(1.0, rel=1e-3)
    assert got.mu_at == 1.0
    assert not got.edge


def test_lagrangian_from_mbar_edges(mbar_const):
    at_zero = cvx.lagrangian_from_mbar(mbar_const, np.zeros(2))
    assert at_zero.value == -0.25 and at_zero.mu_at == 0.25
    assert at_zero.edge
    big = cvx.lagrangian_from_mbar(mbar_const, np.array([40.0, 0.0]))
    assert big.edge and big.mu_at == 4.0
    with pytest.raises(DomainError):
        cvx.lagrangian_from_mbar(
            type("T", (), {"mus": np.array([]), "directions": None,
                           "values": None})(), z=np.zeros(2))


def test_convex_table_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    t = random_table(rng, 2)
    flags = rng.random(t.values.shape) < 0.3
    t = cvx.ConvexTable(t.axes, t.values, flags)
    base = tmp_path / "ltab"
    t.save(base)
    back = cvx.load_convex_table(base)
    np.testing.assert_array_equal(back.values, t.values)
    np.testing.assert_array_equal(back.flags, t.flags)
    for a, b in zip(back.axes, t.axes):
        np.testing.assert_array_equal(a, b)
