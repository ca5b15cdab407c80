import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deltanls import ModelParams, SpatialGrid
from deltanls.diagnostics import (LinearCheckConfig, RunDiagnostics, ScatteringAccumulator, XNormAccumulator,
                                  ZWAccumulator, bootstrap_constants, bump_ensemble, check_linear_estimates,
                                  duhamel_step, mixed_norm, x_norm, y_norm, zw_norms)
from deltanls.errors import StructuralError
from deltanls.grid import japanese
from deltanls.hamiltonian import hamiltonian_for
from deltanls.modulation import ModulationTrajectory

G = SpatialGrid(6.0, 64)


def trap_lp(a, dt, p):
    if math.isinf(p):
        return np.max(a)
    w = np.full(a.size, dt)
    w[0] = w[-1] = dt / 2
    return float(np.sum(w * a**p)) ** (1 / p)


def space_lp(b, dx, p):
    return np.max(b) if math.isinf(p) else float(dx * np.sum(b**p)) ** (1 / p)


@pytest.mark.parametrize("pt,px", [(2, math.inf), (4, math.inf), (1, 2), (math.inf, 2), (4 / 3, 1)])
def test_mixed_norm_separable(pt, px):
    dt = 0.1
    t = dt * np.arange(21)
    a = 1 + np.sin(t) ** 2
    b = np.exp(-G.x**2)
    F = np.outer(a, b)
    expected = trap_lp(a, dt, pt) * space_lp(b, G.dx, px)
    assert mixed_norm(F, G, dt, pt, px) == pytest.approx(expected, rel=1e-12)
    assert mixed_norm(F, G, dt, pt, px, time_outer=False) == pytest.approx(expected, rel=1e-12)


@given(st.integers(0, 2**31 - 1), st.sampled_from([(2, math.inf), (1, 2), (2, 4)]))
def test_mixed_norm_minkowski(seed, pq):
    # ||F||_{L_x^p L_t^q} <= ||F||_{L_t^q L_x^p} for p >= q
    q, p = pq
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(15, G.N)) + 1j * rng.normal(size=(15, G.N))
    inner_t = mixed_norm(F, G, 0.1, q, p, time_outer=False)
    outer_t = mixed_norm(F, G, 0.1, q, p, time_outer=True)
    assert inner_t <= outer_t * (1 + 1e-12)


def test_mixed_norm_shape_and_weight():
    with pytest.raises(StructuralError):
        mixed_norm(np.ones(G.N), G, 0.1, 2, 2)
    F = np.ones((3, G.N))
    w = japanese(G.x, -1.5)
    assert mixed_norm(F, G, 0.1, math.inf, math.inf, weight=w) == pytest.approx(1.0)


def test_x_norm_components_and_windows():
    dt = 0.05
    t = dt * np.arange(41)
    f = np.exp(-G.x**2)
    snaps = np.array([np.exp(-s) * f for s in t])
    full = x_norm(snaps, G, dt)
    assert full.T == pytest.approx(2.0)
    assert full.h1 == pytest.approx(G.sobolev(f, 1.0))
    assert full.strichartz == pytest.approx(trap_lp(np.exp(-t), dt, 4), rel=1e-12)
    ls = np.sqrt(np.max(trap_lp(np.exp(-t), dt, 2) ** 2 * japanese(G.x, -3.0) * np.abs(f) ** 2))
    assert full.weighted_smoothing == pytest.approx(ls, rel=1e-12)
    late = x_norm(snaps, G, dt, window=(1.0, 2.0))
    assert late.T == pytest.approx(1.0)
    assert all(getattr(late, k) <= getattr(full, k) for k in ("h1", "strichartz", "weighted_smoothing",
                                                             "derivative_smoothing"))
    assert full.as_dict()["total"] == pytest.approx(full.total)
    with pytest.raises(StructuralError):
        x_norm(snaps, G, dt, window=(5.0, 6.0))


def test_x_norm_accumulator_matches_batch():
    rng = np.random.default_rng(4)
    snaps = rng.normal(size=(10, G.N)) * np.exp(-G.x**2)
    acc = XNormAccumulator(G, 0.1)
    for s in snaps:
        acc.add(s)
    assert acc.report() == x_norm(snaps, G, 0.1)
    single = XNormAccumulator(G, 0.1)
    single.add(snaps[0])
    assert single.report().strichartz == 0.0


def synthetic(times, z, rhs, E=-0.5):
    n = len(times)
    times = np.asarray(times, float)
    z = np.asarray(z, complex)
    zeta = z * np.exp(1j * E * times)
    return ModulationTrajectory(times, z, np.full(n, E), zeta, np.asarray(rhs, complex), np.zeros(n),
                                np.zeros(n), np.zeros(n), np.zeros(n))


def test_y_norm_constant_rate():
    t = np.linspace(0, 4, 81)
    c = 1e-3
    zeta = 0.05 + c * t
    mt = synthetic(t, zeta * np.exp(0.5j * t), np.full(t.size, c))
    y = y_norm(mt)
    assert y.l1 == pytest.approx(4 * c)
    assert y.l2 == pytest.approx(2 * c)
    assert y.l1_fd == pytest.approx(4 * c)
    assert y.l2_fd == pytest.approx(2 * c)
    assert y.total == pytest.approx(6 * c)
    assert y_norm(synthetic([0.0], [0.05], [0.0])).total == 0


def test_zw_norms_scale_with_z(params, grid, family):
    t = np.linspace(0, 1, 5)
    small = zw_norms(synthetic(t, np.full(5, 0.02), np.zeros(5)), params, grid, family)
    big = zw_norms(synthetic(t, np.full(5, 0.04), np.zeros(5)), params, grid, family)
    assert big.Z / small.Z == pytest.approx(2.0, rel=1e-2)
    assert big.W == pytest.approx(small.W, rel=1e-2)
    assert small.Z_ratio == pytest.approx(small.Z / 0.02)
    acc = ZWAccumulator(grid)
    acc.add(0j, np.zeros(grid.N), family.DQ(0.0))
    assert acc.report().Z == 0 and acc.report().Z_ratio == 0


def test_scattering_state_constant_for_linear_flow():
    g = SpatialGrid(20.0, 512)
    ham = hamiltonian_for(g, -1.0)
    f = ham.project_pc(np.exp(-(g.x - 1) ** 2) * np.exp(0.5j * g.x)) + 0.3 * ham.phi0
    acc = ScatteringAccumulator(g, -1.0, ham=ham)
    for t in np.linspace(0, 4, 9):
        acc.add(t, ham.propagate_linear(f, t))
    rep = acc.report()
    assert np.max(rep.cauchy_tail) < 1e-10
    assert g.l2(rep.v_plus - ham.project_pc(f)) < 1e-10
    assert np.allclose(rep.phi0_component, 0.3 * g.sobolev(ham.phi0, 1.0), rtol=1e-10)


def test_scattering_tail_decreasing_on_converging_sequence():
    g = SpatialGrid(20.0, 512)
    ham = hamiltonian_for(g, -1.0)
    f = ham.project_pc(np.exp(-g.x**2))
    acc = ScatteringAccumulator(g, -1.0, ham=ham)
    for t in np.linspace(0, 10, 21):
        acc.add(t, ham.propagate_pc((1 + 1 / (1 + t)) * f, t))
    rep = acc.report()
    assert rep.tail_decreasing()
    assert rep.spearman_late == pytest.approx(-1.0)
    with pytest.raises(StructuralError):
        ScatteringAccumulator(g, -1.0, ham=ham).report()


def test_duhamel_step_against_functional_calculus():
    g = SpatialGrid(20.0, 256)
    ham = hamiltonian_for(g, -1.0)
    f = np.exp(-g.x**2) * (1 + 0.5j * g.x)
    T = 1.0

    def exact(lam):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(lam == 0, T, np.expm1(-1j * T * lam) / (-1j * np.where(lam == 0, 1, lam)))

    ref = ham.apply_function(ham.project_pc(f), exact, include_bound=False)
    errs = []
    for n in (20, 40):
        D = np.zeros(g.N, complex)
        for _ in range(n):
            D = duhamel_step(D, f, f, T / n, ham)
        errs.append(g.l2(D - ref))
    assert errs[1] < errs[0] / 3.5
    assert errs[1] < 1e-3


def test_bootstrap_constants():
    c = bootstrap_constants(X=0.1, Y=1e-4, Z=0.05, W=1.0, v0_h1=0.05, p=4)
    assert c["C_Y"] == pytest.approx(1e-4 / (0.01 * 0.05**3 + 0.1**5))
    assert c["C_X"] == pytest.approx(0.1 / (0.05 + 1e-4 + 0.1 * 0.05**4 + 0.1**5))
    assert bootstrap_constants(0, 0, 0, 0, 0, 4)["C_Y"] == math.inf


def test_bump_ensemble_is_seeded():
    cfg = LinearCheckConfig(L=20.0, N=256, n_samples=3)
    g = SpatialGrid(cfg.L, cfg.N)
    a = bump_ensemble(cfg, g)[1]
    b = bump_ensemble(cfg, g)[1]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = bump_ensemble(LinearCheckConfig(L=20.0, N=256, n_samples=3, seed=1), g)[1]
    assert not np.array_equal(a[0], c[0])


def test_linear_checks_small():
    cfg = LinearCheckConfig(L=40.0, N=512, T=4.0, dt=0.05, n_samples=3, fit_window=(1.0, 4.0), forcing_T=2.0)
    checks = check_linear_estimates(cfg)
    names = [c.name for c in checks]
    assert names[:4] == ["dispersive", "strichartz_L4Linf", "local_smoothing_weighted", "local_smoothing_derivative"]
    assert len(checks) == 8
    for c in checks:
        assert c.ratios.shape == (3,)
        assert np.all(np.isfinite(c.ratios)) and np.all(c.ratios > 0)
        assert c.as_dict()["max_ratio"] == c.max_ratio
    # the ensemble-envelope decay exponent is negative
    assert checks[0].exponent < 0
    ext = check_linear_estimates(LinearCheckConfig(L=40.0, N=512, T=1.0, checks=("dispersive",)),
                                 samples=[np.exp(-SpatialGrid(40.0, 512).x ** 2)])
    assert len(ext) == 4 and "supplied" in ext[0].ensemble


def test_run_diagnostics_streaming(params, grid, family):
    from deltanls import TimeGrid
    from deltanls.experiments import perturbation
    from deltanls.solver import EvolutionConfig, evolve
    u0 = family.Q(0.05) + 0.01 * perturbation(grid, 1)
    rd = RunDiagnostics(params, grid, dt_out=0.05, checkpoints_every=5)
    evolve(u0, EvolutionConfig(TimeGrid(5e-3, 3.0, 10), store_snapshots=False), params, grid, observer=rd)
    out = rd.finish()
    assert out["modulation"].times.size == 61
    assert out["X"].T == pytest.approx(3.0)
    # P_c is L2-orthogonal but not an H1 contraction; the phi0 part of v is small
    assert out["X_pc"].h1 == pytest.approx(out["X"].h1, rel=1e-3)
    assert out["scattering"].times[-1] == pytest.approx(3.0)
    assert 0.005 < out["v_h1_sup"] < 0.03
