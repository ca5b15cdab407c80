import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from deltanls import Field, SpatialGrid, TimeGrid
from deltanls.errors import ParameterError, StructuralError
from deltanls.grid import japanese
from deltanls.hamiltonian import hamiltonian_for

from conftest import random_field


def test_grid_layout():
    g = SpatialGrid(10.0, 256)
    assert g.dx * g.N == pytest.approx(2 * g.L)
    assert g.x[g.origin] == 0.0
    assert np.all(np.diff(g.x) > 0)
    assert g.x[0] == -10.0


@pytest.mark.parametrize("L,N", [(0.0, 16), (-1.0, 16), (1.0, 15), (1.0, 2), (math.inf, 16)])
def test_grid_rejects_bad_sizes(L, N):
    with pytest.raises(ParameterError):
        SpatialGrid(L, N)


def test_field_invariants():
    g = SpatialGrid(1.0, 8)
    with pytest.raises(StructuralError):
        Field(g, np.zeros(7))
    with pytest.raises(StructuralError):
        Field(g, np.full(8, np.nan))
    f = Field(g, np.ones(8))
    assert len(f) == 8 and f.values.dtype == complex
    with pytest.raises(StructuralError):
        SpatialGrid(2.0, 8).integrate(f)


def test_time_grid():
    tg = TimeGrid(0.1, 1.0, 3)
    assert tg.n_steps == 10
    assert tg.n_outputs == 4
    assert np.allclose(tg.output_times, [0.0, 0.3, 0.6, 0.9])
    with pytest.raises(ParameterError):
        TimeGrid(0.0, 1.0)
    with pytest.raises(ParameterError):
        TimeGrid(0.1, 0.01)
    with pytest.raises(ParameterError):
        TimeGrid(0.1, 1.0, 0)


def test_integrate_constant():
    g = SpatialGrid(10.0, 128)
    assert g.integrate(np.ones(g.N)) == pytest.approx(20.0, abs=1e-12)


def test_integrate_phi0_squared(big_grid):
    phi = hamiltonian_for(big_grid, -1.0).phi0
    assert abs(big_grid.integrate(phi**2) - 1.0) < 1e-8


def test_integrate_gaussian_against_quad(big_grid):
    ref, _ = quad(lambda x: math.exp(-x * x), -np.inf, np.inf, epsabs=1e-14)
    assert abs(big_grid.integrate(np.exp(-big_grid.x**2)) - ref) < 1e-10
    assert ref == pytest.approx(1.7724539, abs=1e-7)


def test_trapezoid_order_on_kinked_function():
    # exp(-|x|) cosh-type kink: trapezoid error is second order in dx
    f = lambda x: np.exp(-np.abs(x)) * np.cos(x)
    exact = 1.0  # int exp(-|x|) cos x dx = 2 * 1/2
    errs, hs = [], []
    for N in (64, 128, 256, 512):
        g = SpatialGrid(30.0, N)
        errs.append(abs(g.integrate(f(g.x)).real - exact))
        hs.append(g.dx)
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert abs(order - 2) < 0.2


def test_inner_product_rules(grid, rng):
    f = random_field(rng, grid)
    g = random_field(rng, grid)
    assert grid.inner(f, 1j * f) == pytest.approx(1j * grid.inner(f, f), abs=1e-12)
    assert grid.inner(f, g) == pytest.approx(np.conj(grid.inner(g, f)), abs=1e-12)
    assert grid.inner(f, f).real >= 0 and abs(grid.inner(f, f).imag) < 1e-14
    even = np.exp(-grid.x**2)
    odd = grid.x * np.exp(-grid.x**2)
    assert abs(grid.inner(even, odd)) < 1e-12


def test_inner_phi0(big_grid):
    phi = hamiltonian_for(big_grid, -1.0).phi0
    assert abs(big_grid.inner(phi, phi) - 1) < 1e-8


@given(st.integers(0, 2**31 - 1))
def test_integrate_linear_and_conjugate(seed):
    rng = np.random.default_rng(seed)
    g = SpatialGrid(5.0, 64)
    f, h = rng.normal(size=(2, 64)) + 1j * rng.normal(size=(2, 64))
    a = complex(rng.normal(), rng.normal())
    assert g.integrate(a * f + h) == pytest.approx(a * g.integrate(f) + g.integrate(h), abs=1e-10)
    assert g.integrate(np.conj(f)) == pytest.approx(np.conj(g.integrate(f)), abs=1e-12)


def test_norms_zero_and_weighted_sup():
    g = SpatialGrid(10.0, 128)
    n = g.norms(np.zeros(g.N))
    assert n == {"l2": 0.0, "h1": 0.0, "weighted_sup": 0.0}
    assert g.norms(np.ones(g.N), alpha=-1.5)["weighted_sup"] == pytest.approx(1.0)
    assert japanese(0.0, -1.5) == 1.0


def test_h1_of_phi0(big_grid):
    phi = hamiltonian_for(big_grid, -1.0).phi0
    assert abs(big_grid.h1(phi) - math.sqrt(2)) < 2e-2


def test_fourier_spike_is_flat():
    g = SpatialGrid(10.0, 128)
    f = np.zeros(g.N)
    f[17] = 1.0
    m = np.abs(g.fourier(f))
    assert np.ptp(m) < 1e-14 * m.max()


def test_fourier_round_trip_and_parseval(rng):
    g = SpatialGrid(7.0, 256)
    for _ in range(100):
        f = rng.normal(size=g.N) + 1j * rng.normal(size=g.N)
        fh = g.fourier(f)
        assert np.max(np.abs(g.inverse_fourier(fh) - f)) < 1e-12 * np.max(np.abs(f))
        l2h = math.sqrt(g.dk * np.sum(np.abs(fh) ** 2))
        assert abs(l2h - g.l2(f)) < 1e-12 * g.l2(f)


def test_fourier_gaussian_self_dual(big_grid):
    g = big_grid
    fh = g.fourier(np.exp(-0.5 * g.x**2))
    assert np.max(np.abs(fh - np.exp(-0.5 * g.k**2))) < 1e-8


def test_fourier_rejects_wrong_length():
    g = SpatialGrid(1.0, 8)
    with pytest.raises(StructuralError):
        g.inverse_fourier(np.zeros(6))


def test_sobolev_flat_norms():
    g = SpatialGrid(30.0, 1024)
    f = np.exp(-0.5 * g.x**2)
    # |f^|^2 = exp(-k^2): H^0 is pi^(1/4), H^1 adds int k^2 exp(-k^2) = sqrt(pi)/2
    assert g.sobolev(f, 0.0) == pytest.approx(math.pi**0.25, rel=1e-10)
    assert g.sobolev(f, 1.0) ** 2 == pytest.approx(1.5 * math.sqrt(math.pi), rel=1e-10)
