"""End-to-end acceptance runs for the library's headline guarantees.

Every test drives the public API the way a study script would and asserts
the tolerance it promises, so ``pytest -v`` on this file reads as a
checklist with one pass/fail line per guarantee.  The two table-building
tests take minutes; everything else runs in seconds.  All runs are seeded
and single-threaded, so reruns are directly comparable.

Numbering only fixes the report order; each name says what is checked.
"""

import numpy as np
import pytest

from hjhomog import convexanalysis as cvx
from hjhomog import environment as env
from hjhomog import homogenize as hom
from hjhomog import ldp, oracle1d
import hjhomog.hjsolver as hj


def _rel_gap(got, want):
    return abs(got - want) / max(1.0, abs(want))


# ---------------------------------------------------------------------------
# 01: the two routes to the effective Hamiltonian agree with the closed
# form H(p) = |p|^2 of the constant-coefficient environment.
# ---------------------------------------------------------------------------

def test_01_two_route_effective_hamiltonian_constant_env(env2d_const):
    # sqrt(mu)-spaced level knots: the deficit interpolation error stays
    # uniform across the lattice, and the 0.03 floor covers p = 0.
    mus = [0.03, 0.0625, 0.25, 0.5625, 1.0, 1.5625, 2.25, 4.0, 6.25, 9.0]
    dirs = hom.sphere_directions(2, 64)
    mt = hom.build_mbar_table(env2d_const, mus, dirs, h=0.05,
                              max_cycles=6000)
    axis = np.arange(-2.0, 2.01, 0.25)
    table = hom.build_effective_table(env2d_const, (axis, axis),
                                      mbar_table=mt,
                                      eps_ladder=[0.5, 0.25, 0.125],
                                      max_cycles=40000)
    pp = axis[:, None] ** 2 + axis[None, :] ** 2
    tol = 0.05 * np.maximum(1.0, pp)
    gap_metric = np.abs(table.hbar_metric - pp)
    gap_cell = np.abs(table.hbar_cell - pp)
    assert gap_metric.max() <= tol.max() or (gap_metric <= tol).all(), \
        f"metric route off by {float((gap_metric - tol).max()):.4f}"
    assert (gap_metric <= tol).all()
    assert (gap_cell <= tol).all(), \
        f"cell route off by {float((gap_cell - tol).max()):.4f}"


# ---------------------------------------------------------------------------
# 02: for the eikonal Hamiltonian the metric solve reproduces the exact
# cone (|y| - 1)+ to within two grid spacings on a large box.
# ---------------------------------------------------------------------------

def test_02_eikonal_metric_matches_exact_cone():
    spec = env.EnvSpec(d=2, model="constant", L=1.0, h=0.1,
                       hamiltonian="power-model", q=1.0, a0=1.0, v0=0.0,
                       lambda1=1.0)
    co = env.sample_environment(spec, seed=0)
    h = 0.1
    # Solve one spacing unit beyond the comparison box: the outer ring
    # carries artificial cone data and the corner layers reach inward.
    fld = hj.solve_metric(co, 1.0, np.zeros(2), half_width=33.0, h=h,
                          max_cycles=4000)
    g = fld.grid
    pts = g.node_points()
    dist = np.linalg.norm(pts, axis=-1).reshape(fld.values.shape)
    exact = np.maximum(dist - 1.0, 0.0)
    inner = np.max(np.abs(pts), axis=-1).reshape(fld.values.shape) <= 32.0 + 1e-9
    sup_err = np.abs(fld.values - exact)[inner].max()
    assert fld.converged
    assert sup_err <= 2.0 * h, f"sup error {sup_err:.4f} exceeds 2h"


# ---------------------------------------------------------------------------
# 03: in one dimension both routes match the zero-mean branch-selection
# quadrature oracle within 3 percent, including on the flat piece.
# ---------------------------------------------------------------------------

def test_03_one_dim_routes_match_quadrature_oracle():
    spec = env.EnvSpec(d=1, model="spectral-field", L=4.0, h=0.01,
                       hamiltonian="power-model", q=1.0,
                       v_range=(0.0, 1.0), lambda1=4.0,
                       spectral_exponent=4.0, corr_length=0.8)
    co = env.sample_environment(spec, seed=3)
    hstar = oracle1d.hstar_1d(co)
    mus = [hstar + 0.02, 0.25, 0.5, 1.0, 1.5, 2.0, 2.6]
    dirs = np.array([[1.0], [-1.0]])
    mt = hom.build_mbar_table(co, mus, dirs, R_ladder=(8.0, 16.0, 32.0),
                              h=0.01, max_cycles=2000)
    probes = [0.0, 0.15, 0.3, 0.5, 0.9, 1.5, 2.1, 2.7, 3.0,
              -0.2, -1.0, -2.4, -3.0]
    for p in probes:
        want = oracle1d.hbar_1d(co, p)
        got_metric = hom.estimate_Hbar_metric(mt, np.array([p]))
        got_cell = hom.estimate_Hbar_cell(co, np.array([p]),
                                          eps_ladder=[0.25, 0.125, 0.0625],
                                          max_cycles=30000)
        assert _rel_gap(got_metric, want) <= 0.03, \
            f"metric route at p={p}: {got_metric:.4f} vs {want:.4f}"
        assert _rel_gap(got_cell, want) <= 0.03, \
            f"cell route at p={p}: {got_cell:.4f} vs {want:.4f}"


# ---------------------------------------------------------------------------
# 04: the audited effective table on the shot-noise environment is convex,
# sits between its structural bounds, and its minimum matches the critical
# level found by bisection to within the bisection bracket.
# ---------------------------------------------------------------------------

def test_04_shot_noise_table_audit(env2d_shot):
    hst = hom.estimate_Hstar(env2d_shot, (-0.15, 0.10), half_width=8.0,
                             h=0.1, max_cycles=2000)
    mus = [0.05, 0.25, 0.5625, 1.0, 1.5625, 2.25]
    mt = hom.build_mbar_table(env2d_shot, mus, R_ladder=[8.0, 16.0, 32.0],
                              h=0.1, max_cycles=6000)
    axis = np.arange(-1.0, 1.01, 0.5)
    table = hom.build_effective_table(env2d_shot, (axis, axis),
                                      mbar_table=mt,
                                      eps_ladder=[0.25, 0.125, 0.0625],
                                      hstar=hst, max_cycles=20000)
    audit = hom.audit_effective_table(table, conv_tol=1e-3)
    assert audit.passed
    assert not audit.convexity_violations
    assert not audit.bound_violations
    assert audit.hstar_gap <= hst.width + 1e-12, \
        f"table minimum {audit.min_table:.5f} vs bisection {hst.value:.5f}"


# ---------------------------------------------------------------------------
# 05: shape stability of the rescaled metric: the R -> 2R ladder readings
# move less than 5 percent at R = 32, and two independent draws of the
# environment agree on the extrapolated limit within 5 percent.
# ---------------------------------------------------------------------------

def test_05_shape_ladder_and_seed_stability():
    spec = env.EnvSpec(d=2, model="shot-noise-potential", L=8.0, h=0.1,
                       hamiltonian="power-model", q=2.0,
                       bump_height=1.0, bump_radius=0.8, intensity=0.3,
                       lambda1=8.0)
    dirs = hom.sphere_directions(2, 8)
    mus = [0.5, 1.0, 2.0]
    tables = []
    for seed in (7, 8):
        co = env.sample_environment(spec, seed=seed)
        tables.append(hom.build_mbar_table(co, mus, dirs, h=0.1,
                                           max_cycles=6000))
    for est in tables[0].estimates:
        r32, r64 = est.ladder_values[-2], est.ladder_values[-1]
        assert abs(r32 - r64) <= 0.05 * max(1.0, abs(r64)), \
            f"ladder drift at mu={est.mu}, e={est.e}: {r32:.4f} vs {r64:.4f}"
    rel = np.abs(tables[0].values - tables[1].values) \
        / np.maximum(1.0, np.abs(tables[0].values))
    assert rel.max() <= 0.05, f"seed disagreement {rel.max():.4f}"


# ---------------------------------------------------------------------------
# 06: structural inequalities of the metric: subadditivity of the ball-sup
# variant, concavity in the level, and the cone upper bound.
# ---------------------------------------------------------------------------

def test_06_metric_subadditivity_concavity_cone(env2d_shot):
    h = 0.1
    rng = np.random.default_rng(11)
    m0 = hj.solve_metric(env2d_shot, 1.0, np.zeros(2), half_width=12.0,
                         h=h, max_cycles=4000)
    tol = 3.0 * h * m0.beta_hi

    # Subadditivity through intermediate points x: the field started from
    # x is the field of the shifted environment read at y - x.
    centers = [np.array([3.2, -2.1]), np.array([-1.4, 2.7]),
               np.array([0.8, 0.5]), np.array([-3.0, -3.0]),
               np.array([2.2, 3.1])]
    shifted = [hj.solve_metric(env.shift(env2d_shot, x), 1.0, np.zeros(2),
                               half_width=12.0, h=h, max_cycles=4000)
               for x in centers]
    worst_sub = -np.inf
    for i in range(200):
        x = centers[i % len(centers)]
        fx = shifted[i % len(centers)]
        y = rng.uniform(-6.0, 6.0, size=2)
        viol = hj.tilde_m(m0, y) - hj.tilde_m(fx, y - x) - hj.tilde_m(m0, x)
        worst_sub = max(worst_sub, float(viol))
    assert worst_sub <= tol, f"subadditivity violated by {worst_sub:.4f}"

    # Concavity in the level on 200 interpolating triples from a uniform
    # level grid; lam is implied by the grid spacing.
    grid_mus = [0.5, 0.75, 1.0, 1.25, 1.5]
    fields = {mu: hj.solve_metric(env2d_shot, mu, np.zeros(2),
                                  half_width=12.0, h=h, max_cycles=4000)
              for mu in grid_mus}
    worst_conc = -np.inf
    triples = [(i, j, k) for i in range(5) for j in range(i + 1, 5)
               for k in range(j + 1, 5)]
    for (i, j, k) in triples:
        mu1, mum, mu2 = grid_mus[i], grid_mus[j], grid_mus[k]
        lam = (mu2 - mum) / (mu2 - mu1)
        for _ in range(20):
            y = rng.uniform(-8.0, 8.0, size=2)
            comb = lam * float(fields[mu1].interp(y)) \
                + (1.0 - lam) * float(fields[mu2].interp(y))
            viol = comb - float(fields[mum].interp(y))
            worst_conc = max(worst_conc, viol)
    assert worst_conc <= tol, f"level concavity violated by {worst_conc:.4f}"

    # Cone bound: no node may exceed beta * (|y| - 1)+ by more than beta*h.
    pts = m0.grid.node_points()
    dist = np.linalg.norm(pts, axis=-1).reshape(m0.values.shape)
    cone = m0.beta_hi * np.maximum(dist - 1.0, 0.0)
    n_viol = int((m0.values > cone + m0.beta_hi * h).sum())
    assert n_viol == 0, f"{n_viol} nodes above the cone bound"


# ---------------------------------------------------------------------------
# 07: the discounted cell solutions respect the exact nodewise lower bound
# and are concave in the momentum up to discretization.
# ---------------------------------------------------------------------------

def test_07_cell_solution_bound_and_p_concavity(env2d_shot):
    eps, h, q = 0.25, 0.1, 2.0
    lam1 = env2d_shot.spec.lambda1
    a_max = float(env2d_shot.a.max())
    rng = np.random.default_rng(0)

    def check_bound(fld, p):
        floor = -lam1 * (np.linalg.norm(p) ** q + 1.0)
        assert (eps * fld.values >= floor).all(), \
            f"nodewise lower bound broken at p={p}"

    endpoints = rng.uniform(-1.5, 1.5, size=(16, 2))
    fields = []
    for p in endpoints:
        fld = hj.solve_discounted(env2d_shot, eps, p)
        check_bound(fld, p)
        fields.append(fld)

    worst = -np.inf
    for _ in range(100):
        i, j = rng.choice(16, size=2, replace=False)
        lam = float(rng.choice([0.25, 0.5, 0.75]))
        p1, p2 = endpoints[i], endpoints[j]
        pm = lam * p1 + (1.0 - lam) * p2
        init = lam * fields[i].values + (1.0 - lam) * fields[j].values
        fm = hj.solve_discounted(env2d_shot, eps, pm, init=init)
        check_bound(fm, pm)
        gap = eps * (lam * fields[i].values
                     + (1.0 - lam) * fields[j].values - fm.values)
        lip = 2.0 * a_max * max(np.linalg.norm(p1), np.linalg.norm(p2))
        worst = max(worst, float(gap.max()) - 3.0 * h * lip)
    assert worst <= 0.0, f"momentum concavity violated by {worst:.4f}"


# ---------------------------------------------------------------------------
# 08: duality toolkit: the discrete conjugate is bit-exact against brute
# force, the biconjugate is idempotent, and both Lagrangian constructions
# reproduce |z|^2/4 for the constant quadratic environment.
# ---------------------------------------------------------------------------

def _brute_conjugate(f, z_axes):
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


def _random_convex_table(rng, d):
    # pointwise max of a few affine functions, sampled on a random lattice
    axes = tuple(np.sort(rng.uniform(-3.0, 3.0, size=int(rng.integers(3, 7))))
                 for _ in range(d))
    axes = tuple(ax + np.arange(len(ax)) * 1e-6 for ax in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    P = np.stack(mesh, axis=-1)
    n_aff = int(rng.integers(2, 6))
    slopes = rng.normal(scale=1.5, size=(n_aff, d))
    offs = rng.normal(scale=1.0, size=n_aff)
    vals = np.max(P @ slopes.T + offs, axis=-1)
    return cvx.ConvexTable(axes, vals)


def test_08_duality_conjugate_and_lagrangian(env2d_const):
    rng = np.random.default_rng(21)
    for trial in range(50):
        d = 1 + trial % 2
        f = _random_convex_table(rng, d)
        g = cvx.legendre_transform(f)
        brute = _brute_conjugate(f, g.axes)
        assert (g.values == brute).all(), f"conjugate mismatch on trial {trial}"
        b1 = cvx.biconjugate(f)
        b2 = cvx.biconjugate(b1)
        np.testing.assert_allclose(b2.values, b1.values, rtol=0.0, atol=1e-12)

    # Both Lagrangian constructions against the closed form |z|^2/4.
    mus = [0.01, 0.0625, 0.25, 0.5625, 1.0, 1.5625, 2.25, 3.0625, 4.0]
    dirs = hom.sphere_directions(2, 16)
    mt = hom.build_mbar_table(env2d_const, mus, dirs,
                              R_ladder=[4.0, 8.0, 16.0], h=0.05,
                              max_cycles=6000)
    axis = np.arange(-2.0, 2.01, 0.25)
    table = hom.build_effective_table(env2d_const, (axis, axis),
                                      eps_ladder=[0.5, 0.25, 0.125],
                                      max_cycles=40000)
    conj = cvx.legendre_transform(cvx.ConvexTable((axis, axis),
                                                  table.hbar_cell))
    z_axis = np.arange(-3.0, 3.01, 0.25)
    for z0 in z_axis:
        for z1 in z_axis:
            z = np.array([z0, z1])
            r = np.linalg.norm(z)
            if r > 3.5:
                continue
            want = 0.25 * r * r
            got_mbar = cvx.lagrangian_from_mbar(mt, z).value
            got_conj, flagged = conj.evaluate(z[None, :])
            assert _rel_gap(got_mbar, want) <= 0.05, \
                f"level-sup Lagrangian at z={z}: {got_mbar:.4f} vs {want:.4f}"
            assert not flagged[0]
            assert _rel_gap(float(got_conj[0]), want) <= 0.05, \
                f"conjugate Lagrangian at z={z}: {float(got_conj[0]):.4f}"


# ---------------------------------------------------------------------------
# 09: quenched exit-rate for the free diffusion: the tilted Monte Carlo
# estimate and the variational prediction both give 1/4.
# ---------------------------------------------------------------------------

def test_09_gaussian_exit_rate_tilted(env2d_gaussian):
    K = ldp.SetDescriptor(kind="ball-complement", center=(0.0, 0.0),
                          radius=1.0)
    ens = ldp.simulate_paths(env2d_gaussian, np.zeros(2), 8.0, 0.1,
                             1_000_000, seed=9, tilt=np.array([0.5, 0.0]))
    est = ldp.empirical_rate(ens, K, np.zeros(2), prediction=0.25)
    assert est.tilted
    assert abs(est.value - 0.25) <= 0.15 * 0.25, \
        f"empirical rate {est.value:.4f} vs 1/4"

    axis = np.arange(-2.0, 2.01, 0.25)
    table = hom.build_effective_table(env2d_gaussian, (axis, axis),
                                      eps_ladder=[0.5, 0.25, 0.125],
                                      max_cycles=40000)
    i0 = len(axis) // 2
    conj = cvx.legendre_transform(cvx.ConvexTable((axis, axis),
                                                  table.hbar_cell))
    pred = ldp.ldp_prediction(conj, float(table.hbar_cell[i0, i0]), K)
    # The discrete conjugate undershoots between dual nodes by at most the
    # per-axis chord term (step/2)^2, so d * 0.015625 here.
    assert 0.25 - 2.0 * 0.015625 - 1e-9 <= pred <= 0.25 + 1e-9, \
        f"prediction {pred:.5f} vs 1/4"


# ---------------------------------------------------------------------------
# 10: Feynman-Kac consistency: Monte Carlo survival matches the parabolic
# march within 3 standard errors at 10 probe points, and the log-transform
# residual contracts under grid refinement.
# ---------------------------------------------------------------------------

def test_10_feynman_kac_and_log_transform_residual(env2d_diffusive):
    fld = ldp.pde_partition_function(env2d_diffusive, 2.0)
    rng = np.random.default_rng(5)
    probes = rng.uniform(-4.0, 4.0, size=(10, 2))
    for k, x0 in enumerate(probes):
        ens = ldp.simulate_paths(env2d_diffusive, x0, 2.0, 0.01, 20000,
                                 seed=100 + k)
        w = np.exp(ens.log_weight)
        s_mc = float(w.mean())
        se = float(w.std(ddof=1)) / np.sqrt(len(w))
        s_pde = float(fld.interp(x0))
        assert abs(s_mc - s_pde) <= 3.0 * se, \
            f"probe {x0}: mc={s_mc:.5f} pde={s_pde:.5f} 3se={3 * se:.5f}"

    f1 = ldp.pde_partition_function(env2d_diffusive, 2.0, grid=80,
                                    snapshot_times=(1.84, 1.92, 2.0))
    r1 = ldp.hopf_cole_residual(f1, env2d_diffusive)
    f2 = ldp.pde_partition_function(env2d_diffusive, 2.0, grid=160,
                                    snapshot_times=(1.92, 1.96, 2.0))
    r2 = ldp.hopf_cole_residual(f2, env2d_diffusive)
    ratio = r1.sup_residual / r2.sup_residual
    assert ratio >= 1.8, f"residual ratio {ratio:.2f} under refinement"


# ---------------------------------------------------------------------------
# 11: survival asymptotics: the constant-potential rate hits the effective
# level exactly, and the random-potential gap decreases along the horizon
# ladder t = 4, 8, 16.
# ---------------------------------------------------------------------------

def test_11_survival_rate_ladders():
    cspec = env.EnvSpec(d=2, model="constant", L=1.0, h=0.05,
                        hamiltonian="quadratic-drift-model",
                        sigma0=np.sqrt(2.0), lambda2=2.5, v0=0.3,
                        lambda1=2.0)
    cco = env.sample_environment(cspec, seed=0)
    hbar0 = hom.estimate_Hbar_cell(cco, np.zeros(2),
                                   eps_ladder=[0.5, 0.25, 0.125],
                                   max_cycles=40000)
    rep = ldp.survival_rate_check(cco, np.zeros(2), (16.0,), hbar0)
    assert rep.gaps[0] <= 1e-3, f"constant-potential gap {rep.gaps[0]:.2e}"

    # The random case needs a period long enough that the horizon ladder
    # outruns the torus eigenvalue plateau.
    rspec = env.EnvSpec(d=2, model="shot-noise-potential", L=16.0, h=0.1,
                        hamiltonian="quadratic-drift-model",
                        sigma0=np.sqrt(2.0), lambda2=2.5,
                        bump_height=1.0, bump_radius=0.8, intensity=0.3,
                        lambda1=8.0)
    rco = env.sample_environment(rspec, seed=7)
    hbar0_r = hom.estimate_Hbar_cell(rco, np.zeros(2),
                                     eps_ladder=[0.5, 0.25, 0.125],
                                     max_cycles=40000)
    rep_r = ldp.survival_rate_check(rco, np.zeros(2), (4.0, 8.0, 16.0),
                                    hbar0_r)
    assert rep_r.gap_decreasing, \
        f"gaps {np.round(rep_r.gaps, 6)} fail to decrease"
