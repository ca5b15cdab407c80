"""Time integration of i u_t = H u + mu |u|^p u.

The production scheme is Strang splitting between the exact linear flow of
the discrete H and the exact pointwise phase rotation u -> u exp(-i dt mu |u|^p).
Two cross-checks are independent of the spectral linear flow in different
ways: a Picard iteration of the Duhamel system for (v, a) with
u = a phi0 + v, and a Crank-Nicolson scheme on a finite-difference H that
encodes the delta as a single modified diagonal entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, EvolutionAbort, ParameterError, StructuralError
from .grid import SpatialGrid, TimeGrid
from .hamiltonian import DeltaHamiltonian, ModelParams, hamiltonian_for

BLOWUP_THRESHOLD = 1e3
SCHEMES = ("strang", "picard", "crank_nicolson")


@dataclass(frozen=True)
class Absorber:
    """Damping rate W(x) = strength * ramp^2 on the outer fraction of the box."""

    width_fraction: float = 0.1
    strength: float = 1.0

    def __post_init__(self):
        if not (0 < self.width_fraction <= 0.1):
            raise ParameterError("absorbing layer must lie within the outer 10% of the box")
        if self.strength < 0:
            raise ParameterError("absorber strength must be nonnegative")

    def rate(self, grid: SpatialGrid) -> np.ndarray:
        start = grid.L * (1 - self.width_fraction)
        ramp = np.clip((np.abs(grid.x) - start) / (grid.L - start), 0.0, 1.0)
        return self.strength * ramp**2


@dataclass(frozen=True)
class EvolutionConfig:
    time: TimeGrid
    scheme: str = "strang"
    absorber: Optional[Absorber] = None
    mass_drift_tol: float = 1e-8
    energy_drift_tol: float = 1e-6
    check_conservation: bool = True
    store_snapshots: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ParameterError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.mass_drift_tol <= 0 or self.energy_drift_tol <= 0:
            raise ParameterError("conservation thresholds must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    snapshots: Optional[np.ndarray]
    mass: np.ndarray
    energy: np.ndarray
    origin_amplitude: np.ndarray
    absorbed_mass: np.ndarray
    scheme: str
    dt: float
    stride: int
    grid: SpatialGrid = field(repr=False)
    params: ModelParams = field(repr=False)
    final: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def mass_drift_rate(self) -> float:
        """max_t |M(t) + absorbed(t) - M(0)| / (M(0) t)."""
        return _deviation_rate(self.times, self.mass + self.absorbed_mass)

    @property
    def energy_drift_rate(self) -> float:
        """Secular energy drift: |slope| of the least-squares line through (E(t) - E(0)) / |E(0)|."""
        return _slope_rate(self.times, self.energy)

    @property
    def energy_oscillation(self) -> float:
        """max_t |E(t) - E(0)| / |E(0)|, the bounded splitting oscillation."""
        ref = _ref(self.energy[0])
        return float(np.max(np.abs(self.energy - self.energy[0])) / ref)


ENERGY_WINDOW = 10.0


def _ref(x):
    return abs(x) if abs(x) > 1e-300 else 1.0


def _deviation_rate(times, series):
    if len(times) < 2:
        return 0.0
    return float(np.max(np.abs(series[1:] - series[0]) / (_ref(series[0]) * times[1:])))


def _slope_rate(times, series):
    if len(times) < 2:
        return 0.0
    rel = (np.asarray(series) - series[0]) / _ref(series[0])
    return float(abs(np.polyfit(times, rel, 1)[0]))


def _check_blowup(u, t):
    m = float(np.max(np.abs(u)))
    if not np.isfinite(m) or m > BLOWUP_THRESHOLD:
        raise EvolutionAbort(f"blow-up proxy triggered at t = {t:.6g} (sup |u| = {m:.3e})", time=t, sup=m)


def nonlinear_phase(u, tau, params: ModelParams):
    """Exact flow of i u_t = mu |u|^p u over time tau."""
    if params.mu == 0:
        return u
    return u * np.exp(-1j * tau * params.mu * np.abs(u) ** params.p)


def step_strang(u, dt, params: ModelParams, ham: DeltaHamiltonian, damping=None, t=0.0):
    """One Strang step N(dt/2) L(dt) N(dt/2); ``damping`` is exp(-W dt/2) or None."""
    u = nonlinear_phase(np.asarray(u, dtype=complex), 0.5 * dt, params)
    if damping is not None:
        u = u * damping
    u = ham.propagate_linear(u, dt)
    u = nonlinear_phase(u, 0.5 * dt, params)
    if damping is not None:
        u = u * damping
    _check_blowup(u, t + dt)
    return u


class _CrankNicolson:
    """Finite-difference H with the delta as q/dx on the origin diagonal."""

    def __init__(self, grid: SpatialGrid, q: float, dt: float):
        N, dx = grid.N, grid.dx
        main = np.full(N, 1.0 / dx**2)
        main[grid.origin] += q / dx
        off = np.full(N, -0.5 / dx**2)
        H = sp.diags([main, off[:-1], off[:-1]], [0, 1, -1], format="lil")
        H[0, N - 1] = H[N - 1, 0] = -0.5 / dx**2
        self.H = H.tocsc()
        eye = sp.identity(N, format="csc", dtype=complex)
        self.rhs = (eye - 0.5j * dt * self.H).tocsr()
        try:
            self.lu = splu((eye + 0.5j * dt * self.H).tocsc())
        except RuntimeError as exc:  # pragma: no cover - singular only for pathological input
            raise StructuralError(f"Crank-Nicolson factorization failed: {exc}") from exc

    def __call__(self, u):
        return self.lu.solve(self.rhs @ u)

    @staticmethod
    def bound_energy(q, dx):
        """Eigenvalue of the finite-difference bound state."""
        return -(math.cosh(math.asinh(abs(q) * dx)) - 1) / dx**2


def evolve(u0, config: EvolutionConfig, params: ModelParams, grid: SpatialGrid,
           observer: Callable | None = None, ham: DeltaHamiltonian | None = None) -> Trajectory:
    """Integrate from u0 over config.time, recording every ``stride`` steps.

    ``observer(m, t, u)`` is called at each output time, which allows
    streaming diagnostics without storing snapshots.
    """
    ham = ham or hamiltonian_for(grid, params.q)
    tg = config.time
    u = np.array(grid.values(u0), dtype=complex)
    n_out = tg.n_outputs
    times = tg.output_times
    snaps = np.empty((n_out, grid.N), dtype=complex) if config.store_snapshots else None
    mass = np.empty(n_out)
    energy = np.empty(n_out)
    origin = np.empty(n_out)
    absorbed = np.zeros(n_out)
    dt = tg.dt
    damping = None
    if config.absorber is not None:
        damping = np.exp(-0.5 * dt * config.absorber.rate(grid))
    cn = _CrankNicolson(grid, params.q, dt) if config.scheme == "crank_nicolson" else None
    lost = 0.0

    def record(m, t, u):
        mass[m] = grid.l2(u) ** 2
        energy[m] = ham.energy_form(u, params) if cn is None else _fd_energy(u, cn, params, grid)
        origin[m] = abs(u[grid.origin])
        absorbed[m] = lost
        if snaps is not None:
            snaps[m] = u
        if observer is not None:
            observer(m, t, u)

    record(0, 0.0, u)
    m = 0
    for n in range(1, tg.n_steps + 1):
        t = n * dt
        before = grid.l2(u) ** 2 if damping is not None else 0.0
        if config.scheme == "strang":
            u = step_strang(u, dt, params, ham, damping, t - dt)
        elif config.scheme == "crank_nicolson":
            u = nonlinear_phase(u, 0.5 * dt, params)
            if damping is not None:
                u = u * damping
            u = cn(u)
            u = nonlinear_phase(u, 0.5 * dt, params)
            if damping is not None:
                u = u * damping
            _check_blowup(u, t)
        else:
            u = picard_lwp(u, dt, params, grid, tol=1e-13, steps=1, ham=ham)
            _check_blowup(u, t)
        if damping is not None:
            lost += before - grid.l2(u) ** 2
        if n % tg.stride == 0:
            m += 1
            record(m, t, u)
            if config.check_conservation:
                _check_conservation(times[: m + 1], mass[: m + 1] + absorbed[: m + 1], energy[: m + 1],
                                    config, damping is None, t)
    traj = Trajectory(times, snaps, mass, energy, origin, absorbed, config.scheme, dt, tg.stride, grid, params, u)
    return traj


def _fd_energy(u, cn, params, grid):
    val = 0.5 * float(np.real(np.vdot(u, cn.H @ u))) * grid.dx
    if params.mu != 0:
        val += params.mu / (params.p + 2) * float(grid.integrate(np.abs(u) ** (params.p + 2)).real)
    return val


def _check_conservation(times, mass, energy, config, check_energy, t):
    md = _deviation_rate(times, mass)
    if md > 10 * config.mass_drift_tol:
        raise EvolutionAbort(f"mass drift {md:.3e} per unit time exceeds 10x threshold at t = {t:.6g}",
                             time=t, mass_drift=md)
    # the energy slope is only meaningful once it averages over the splitting oscillation
    if check_energy and times[-1] >= ENERGY_WINDOW:
        ed = _slope_rate(times, energy)
        if ed > 10 * config.energy_drift_tol:
            raise EvolutionAbort(f"energy drift {ed:.3e} per unit time exceeds 10x threshold at t = {t:.6g}",
                                 time=t, energy_drift=ed)


def picard_lwp(u0, T_short, params: ModelParams, grid: SpatialGrid, tol=1e-12, steps=None,
               max_iter=60, max_halvings=5, ham: DeltaHamiltonian | None = None):
    """u(T_short) from a Picard iteration of the Duhamel system.

    With u = a phi0 + v, v in the continuous subspace,
        a(t) = e^{i q^2 t/2} [a0 - i int_0^t e^{-i q^2 s/2} <phi0, F(u(s))> ds]
        v(t) = e^{-itH} v0 - i int_0^t e^{-i(t-s)H} P_c F(u(s)) ds,
    with the time integrals discretized by the trapezoid rule on ``steps``
    uniform nodes (default: spacing about 1e-4).  On failure to contract the
    interval is halved and the halves are chained (at most ``max_halvings``).
    """
    ham = ham or hamiltonian_for(grid, params.q)
    u0 = np.array(grid.values(u0), dtype=complex)
    if T_short == 0:
        return u0
    last = None
    for halving in range(max_halvings + 1):
        pieces = 2**halving
        tau = T_short / pieces
        n = steps if steps is not None else max(1, int(math.ceil(abs(tau) / 1e-4)))
        try:
            u = u0
            for _ in range(pieces):
                u = _picard_interval(u, tau, n, params, ham, tol, max_iter)
            return u
        except ConvergenceError as exc:
            last = exc
    raise ConvergenceError(f"Picard iteration failed after {max_halvings} halvings", last.residuals if last else None)


def _picard_interval(u0, T, n, params, ham, tol, max_iter):
    g = ham.grid
    phi = ham.phi0
    h = T / n
    lam = ham.eig_bound
    a0 = g.inner(phi, u0)
    v0 = u0 - a0 * phi
    # free evolution on the nodes
    a_free = a0 * np.exp(-1j * lam * h * np.arange(n + 1))
    v_free = [v0]
    for _ in range(n):
        v_free.append(ham.propagate_linear(v_free[-1], h))
    U = np.array([a_free[k] * phi + v_free[k] for k in range(n + 1)])
    if params.mu == 0:
        return U[-1]
    history = []
    for it in range(max_iter):
        F = params.mu * np.abs(U) ** params.p * U
        fa = F @ phi * g.dx
        Fc = F - fa[:, None] * phi
        # a-channel with the integrating factor
        ph = np.exp(1j * lam * h * np.arange(n + 1))
        integ = ph * fa
        cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (integ[1:] + integ[:-1]))])
        a = np.exp(-1j * lam * h * np.arange(n + 1)) * (a0 - 1j * cum)
        # v-channel: I_k = e^{-ihH}[I_{k-1} + h/2 F_{k-1}] + h/2 F_k
        V = np.empty_like(U)
        V[0] = v0
        acc = np.zeros(g.N, dtype=complex)
        for k in range(1, n + 1):
            acc = ham.propagate_pc(acc + 0.5 * h * Fc[k - 1], h) + 0.5 * h * Fc[k]
            V[k] = v_free[k] - 1j * acc
        U_new = a[:, None] * phi + V
        res = float(np.max(np.sqrt(g.dx * np.sum(np.abs(U_new - U) ** 2, axis=1))))
        history.append(res)
        U = U_new
        if res < tol:
            return U[-1]
        if len(history) > 3 and history[-1] > history[-2] > history[-3]:
            break
    raise ConvergenceError(f"Picard iteration does not contract on an interval of length {T:g}", history)


def crank_nicolson_oracle(u0, config: EvolutionConfig, params: ModelParams, grid: SpatialGrid) -> Trajectory:
    """Reference trajectory from the finite-difference Crank-Nicolson scheme."""
    cfg = EvolutionConfig(config.time, "crank_nicolson", config.absorber, config.mass_drift_tol,
                          config.energy_drift_tol, config.check_conservation, config.store_snapshots)
    return evolve(u0, cfg, params, grid)


def fd_bound_state(grid: SpatialGrid, q: float):
    """Normalized bound state and eigenvalue of the finite-difference H."""
    dx = grid.dx
    kappa = math.asinh(abs(q) * dx) / dx
    v = np.exp(-kappa * np.abs(grid.x))
    v /= grid.l2(v)
    return v, _CrankNicolson.bound_energy(q, dx)
