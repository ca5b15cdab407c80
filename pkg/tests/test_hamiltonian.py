import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from deltanls import ModelParams, SpatialGrid
from deltanls.errors import ParameterError
from deltanls.hamiltonian import (DeltaHamiltonian, ScatteringData, SpectralKernel, hamiltonian_for, phi0,
                                  phi0_exact, spectral_density, spectral_quadrature_oracle)

from conftest import random_field


def test_model_params_validation():
    for bad in (dict(q=0.0), dict(q=1.0), dict(p=3), dict(p=5), dict(p=2), dict(mu=0.0)):
        with pytest.raises(ParameterError):
            ModelParams(**bad)
    assert ModelParams.free_flow(-1.0).mu == 0
    with pytest.raises(ParameterError):
        ModelParams(q=-1, mu=1.0, linear=True)


def test_phi0_values(big_grid):
    assert phi0_exact(-1.0, 0.0) == 1.0
    assert phi0_exact(-2.0, 1.0) == pytest.approx(math.sqrt(2) * math.exp(-2), rel=1e-14)
    assert phi0_exact(-2.0, 1.0) == pytest.approx(0.19139, abs=1e-5)
    f = phi0(ModelParams(), big_grid)
    assert abs(f.values[big_grid.origin] - 1.0) < 1e-4
    assert abs(big_grid.integrate(np.abs(f.values) ** 2) - 1) < 1e-8
    # the discrete eigenvector is exactly proportional to the closed form
    ratio = f.values.real / phi0_exact(-1.0, big_grid.x)
    assert np.ptp(ratio[np.abs(big_grid.x) < 20]) < 1e-12
    with pytest.raises(ParameterError):
        phi0_exact(0.5, 0.0)
    with pytest.raises(ParameterError):
        DeltaHamiltonian(big_grid, 1.0)


def test_project_pc(ham, grid, rng):
    assert np.max(np.abs(ham.project_pc(ham.phi0))) < 1e-10
    odd = grid.x * np.exp(-grid.x**2)
    assert np.max(np.abs(ham.project_pc(odd) - odd)) < 1e-14
    f = random_field(rng, grid)
    p = ham.project_pc(f)
    assert abs(grid.inner(ham.phi0, p)) < 1e-10
    assert np.max(np.abs(ham.project_pc(p) - p)) < 1e-10


def test_distorted_ft_round_trip_and_plancherel(ham, grid, rng):
    f = ham.project_pc(np.exp(-0.5 * (grid.x - 0.7) ** 2) * np.exp(0.4j * grid.x))
    c = ham.distorted_ft(f)
    assert np.max(np.abs(ham.inverse_distorted_ft(c) - f)) < 1e-8
    # Plancherel: the edge mode is absent for smooth data
    assert abs(np.sqrt(np.sum(np.abs(c) ** 2)) - grid.l2(f)) < 1e-8
    assert np.sqrt(np.sum(np.abs(ham.distorted_ft(ham.phi0)) ** 2)) < 1e-8


def test_distorted_ft_free_limit():
    g = SpatialGrid(20.0, 1024)
    ham = hamiltonian_for(g, -1e-3)
    f = np.exp(-0.5 * (g.x - 1.0) ** 2) * np.exp(0.8j * g.x)
    c = ham.distorted_ft(f)
    fh = g.fourier(f)
    n = np.arange(1, g.M)
    plus, minus = fh[g.M + n], fh[g.M - n]
    s = math.sqrt(2 * math.pi) / (2 * math.sqrt(g.L))
    even, odd = s * (plus + minus), s * 1j * (plus - minus)
    scale = np.sqrt(np.sum(np.abs(c) ** 2))
    assert np.sqrt(np.sum(np.abs(c[0] - even) ** 2 + np.abs(c[1] - odd) ** 2)) < 1e-2 * scale


def test_discrete_spectrum_matches_tridiagonal(grid):
    small = SpatialGrid(4.0, 64)
    ham = DeltaHamiltonian(small, -1.0)
    ev = np.sort(np.linalg.eigvals(ham.tridiagonal_even_operator()).real)
    # the bound and edge states plus the continuum (1 - cos theta)/dx^2
    cont = (1 - np.cos(ham.theta)) / small.dx**2
    assert np.allclose(np.sort(ev)[1:-1], np.sort(cont), atol=1e-9)


@given(st.integers(0, 2**31 - 1), st.floats(-20, 20))
def test_unitarity_and_commutation(seed, t):
    rng = np.random.default_rng(seed)
    g = SpatialGrid(20.0, 512)
    ham = hamiltonian_for(g, -1.0)
    f = random_field(rng, g)
    u = ham.propagate_linear(f, t)
    assert abs(g.l2(u) - g.l2(f)) < 1e-10 * g.l2(f)
    a = ham.project_pc(ham.propagate_linear(f, t))
    b = ham.propagate_linear(ham.project_pc(f), t)
    assert np.max(np.abs(a - b)) < 1e-10
    assert np.max(np.abs(ham.propagate_pc(f, t) - b)) < 1e-10


def test_unitarity_fifty_samples(ham, grid, rng):
    for _ in range(50):
        f = random_field(rng, grid)
        t = rng.uniform(-50, 50)
        assert abs(grid.l2(ham.propagate_linear(f, t)) - grid.l2(f)) < 1e-10 * grid.l2(f)


def test_group_law(ham, grid, rng):
    f = random_field(rng, grid)
    for s, t in [(0.3, 1.7), (-2.0, 5.0), (10.0, 10.0)]:
        lhs = ham.propagate_linear(ham.propagate_linear(f, s), t)
        assert np.max(np.abs(lhs - ham.propagate_linear(f, s + t))) < 1e-8
    assert np.array_equal(ham.propagate_linear(f, 0.0), f)


def test_eigenphase(ham):
    u = ham.propagate_linear(ham.phi0, 1.0)
    assert np.max(np.abs(u - np.exp(0.5j) * ham.phi0)) < 1e-8
    assert np.max(np.abs(ham.propagate_pc(ham.phi0, 3.0))) < 1e-10


def test_scattering_data():
    sd = ScatteringData(-1.0)
    k = np.linspace(1e-3, 50, 2000)
    assert np.max(np.abs(np.abs(sd.r(k)) ** 2 + np.abs(sd.t(k)) ** 2 - 1)) < 1e-14
    assert np.max(np.abs(1 + sd.r(k) - sd.t(k))) < 1e-14
    assert np.max(sd.jump_residual(k)) < 1e-12


def test_spectral_kernel_symmetry_and_density():
    x, y = np.array([-1.3, 0.0, 0.4, 2.2]), np.array([0.7, -0.5, 1.1, 0.0])
    for lam in (0.01, 0.5, 7.0):
        K = SpectralKernel(-1.0, lam)
        assert np.allclose(K(x, y), K(y, x), atol=1e-14)
        assert np.allclose(K.density(x, y).imag, 0, atol=1e-14)
        assert np.allclose(K.density(x, y).real, spectral_density(lam, x, y, -1.0), atol=1e-13)


def test_apply_H(ham, grid, rng):
    assert np.max(np.abs(ham.apply_H(ham.phi0) + 0.5 * ham.phi0)) < 1e-6
    f = random_field(rng, grid)
    assert abs(grid.inner(f, ham.apply_H(f)).imag) < 1e-8 * grid.l2(f) ** 2
    g = random_field(rng, grid)
    a = complex(rng.normal(), rng.normal())
    assert np.max(np.abs(ham.apply_H(a * f + g) - a * ham.apply_H(f) - ham.apply_H(g))) < 1e-12 * (1 + abs(a)) * 1e3


def test_apply_H_away_from_origin():
    g = SpatialGrid(40.0, 4096)
    ham = hamiltonian_for(g, -1.0)
    packet = np.exp(-0.5 * (g.x - 12.0) ** 2) * np.sin(2.0 * g.x)
    f = ham.project_pc(packet)
    free = g.fourier_multiplier(f, lambda k: 0.5 * k**2)
    assert np.max(np.abs(ham.apply_H(f) - free)) < 1e-4


def test_energy_form(ham, grid, rng, params):
    assert ham.energy_form(np.zeros(grid.N), params) == 0.0
    assert abs(ham.energy_form(ham.phi0) + 0.25) < 1e-6
    f = random_field(rng, grid, 0.3)
    for th in rng.uniform(0, 2 * np.pi, 5):
        assert abs(ham.energy_form(np.exp(1j * th) * f, params) - ham.energy_form(f, params)) < 1e-12


def test_oracle_identity_and_phi0():
    g = SpatialGrid(6.0, 64)
    fn = lambda y: np.exp(-0.5 * (y - 0.5) ** 2)
    res = spectral_quadrature_oracle(fn, 0.0, g, -1.0, tol=1e-6)
    # P_c f at t = 0 from the exact overlap with phi0

    ov = quad(lambda y: fn(y) * phi0_exact(-1.0, y), -40, 40, points=[0.0], epsabs=1e-13)[0]
    pc = fn(g.x) - ov * phi0_exact(-1.0, g.x)
    assert np.max(np.abs(res.values - pc)) < 1e-6
    assert res.error_estimate < 1e-6
    # phi0 has a kink, so the free k-integral converges slowly and the oracle reports a larger error
    zero = spectral_quadrature_oracle(lambda y: phi0_exact(-1.0, y), 0.7, g, -1.0, tol=1e-3, y_extent=30.0)
    assert np.max(np.abs(zero.values)) < max(1e-3, 3 * zero.error_estimate)


def test_oracle_matches_propagator_on_large_box():
    # the oracle lives on R; the fast propagator needs a box large enough that radiation does not wrap
    coarse = SpatialGrid(4.0, 64)
    fn = lambda y: np.exp(-0.5 * ((y - 1.5) / 0.4) ** 2 - 1.6j * y)
    res = spectral_quadrature_oracle(fn, 0.5, coarse, -1.0, tol=1e-7, k_max=60.0)
    fine = SpatialGrid(64.0, 8192)
    u = hamiltonian_for(fine, -1.0).propagate_pc(fn(fine.x), 0.5)
    idx = np.searchsorted(fine.x, coarse.x)
    assert np.allclose(fine.x[idx], coarse.x)
    assert np.max(np.abs(u[idx] - res.values)) < 1e-4
