"""Decomposition u = Q[z] + v with Im<v, D_j Q[z]> = 0 and the ODE for z.

The ODE is written as A (z' + iEz) = b.  Differentiating the orthogonality
conditions gives M (z' + iEz) = -Re<G(v,Q), D_jQ> with
M_jk = Im<v, D_jD_kQ> + Im<D_jQ, D_kQ>, whose leading part is
[[0, 1], [-1, 0]] for <f,g> = int conj(f) g.  We store the equivalent
system A = -M, b = Re<G, D_jQ>, so that A tends to [[0, -1], [1, 0]] as the
data shrink; A^{-1} b is unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np

from .boundstates import BoundState, SmallSolitonFamily, nonlinearity, nonlinearity_derivative
from .errors import ConvergenceError, DeltaNLSError, DomainError, IllConditioned, ParameterError
from .grid import SpatialGrid
from .hamiltonian import ModelParams, hamiltonian_for

DELTA_MAX = 0.2
COND_MAX = 1e3

_FAMILIES: dict = {}


def family_for(params: ModelParams, grid: SpatialGrid, s_max=0.2) -> SmallSolitonFamily:
    """Shared interpolated soliton family per (params, grid)."""
    key = (params, grid.L, grid.N, float(s_max))
    fam = _FAMILIES.get(key)
    if fam is None:
        if len(_FAMILIES) > 8:
            _FAMILIES.clear()
        fam = SmallSolitonFamily(params, grid, s_max=s_max)
        _FAMILIES[key] = fam
    return fam


# ----------------------------------------------------------------------
# nonlinear remainder


def remainder_G(v, Q, params: ModelParams) -> np.ndarray:
    """Part of F(Q+v) - F(Q) beyond the linearization at Q.

    Both theta-integrals have polynomial integrands of degree p in theta,
    so Gauss-Legendre with p/2 + 1 nodes is exact.
    """
    v = np.asarray(v, dtype=complex)
    Q = np.asarray(Q, dtype=complex)
    if v.shape != Q.shape:
        raise ParameterError(f"shape mismatch {v.shape} vs {Q.shape}")
    p, mu = params.p, params.mu
    nodes, weights = np.polynomial.legendre.leggauss(p // 2 + 1)
    theta, w = 0.5 * (nodes + 1), 0.5 * weights
    aQ2 = np.abs(Q) ** 2
    base1 = aQ2 ** (p // 2)
    base2 = aQ2 ** (p // 2 - 1) * Q * Q
    I1 = np.zeros_like(v)
    I2 = np.zeros_like(v)
    for th, wt in zip(theta, w):
        U = Q + th * v
        a2 = np.abs(U) ** 2
        I1 += wt * (a2 ** (p // 2) - base1)
        I2 += wt * (a2 ** (p // 2 - 1) * U * U - base2)
    return mu * (0.5 * (p + 2) * v * I1 + 0.5 * p * np.conj(v) * I2)


def remainder_identity_defect(v, Q, params: ModelParams) -> float:
    """sup |F(Q+v) - F(Q) - DF(Q)v - G(v,Q)|."""
    v = np.asarray(v, dtype=complex)
    Q = np.asarray(Q, dtype=complex)
    lhs = nonlinearity(Q + v, params) - nonlinearity(Q, params) - nonlinearity_derivative(Q, v, params)
    return float(np.max(np.abs(lhs - remainder_G(v, Q, params))))


# ----------------------------------------------------------------------
# decomposition


@dataclass
class Decomposition:
    z: complex
    state: BoundState
    v: np.ndarray = field(repr=False)
    residual: np.ndarray
    iterations: int
    history: list = field(default_factory=list, repr=False)
    u_h1: float = 0.0
    v_h1: float = 0.0

    @property
    def size_ratio(self) -> float:
        """(|z| + ||v||_H1) / ||u||_H1."""
        return (abs(self.z) + self.v_h1) / self.u_h1 if self.u_h1 > 0 else 0.0


def _orthogonality(grid, v, D):
    return np.array([grid.inner(v, D[0]).imag, grid.inner(v, D[1]).imag])


def _newton_matrix(grid, v, D, D2):
    """M_jk = Im<v, D_jD_kQ> + Im<D_jQ, D_kQ>, the Jacobian of f_j in z_k."""
    M = np.empty((2, 2))
    for j in range(2):
        for k in range(2):
            M[j, k] = grid.inner(v, D2[j][k]).imag + grid.inner(D[j], D[k]).imag
    return M


def extract_z(u, z_guess=None, params: ModelParams | None = None, grid: SpatialGrid | None = None,
              tol=1e-10, family: SmallSolitonFamily | None = None, delta_max=DELTA_MAX,
              max_iter=25) -> Decomposition:
    """Newton iteration for Im<u - Q[z], D_jQ[z]> = 0 near z_guess.

    The default guess is <phi0, u>.  Steps are confined to the disc of radius
    0.5|z_guess| + 0.05 around the guess.
    """
    params = params or ModelParams()
    if grid is None:
        if not hasattr(u, "grid"):
            raise ParameterError("a grid is required when u is a plain array")
        grid = u.grid
    u = np.asarray(grid.values(u), dtype=complex)
    fam = family or family_for(params, grid)
    unorm = grid.h1(u)
    if unorm > delta_max:
        raise DomainError(f"||u||_H1 = {unorm:.4g} exceeds the smallness threshold {delta_max:g}")
    if z_guess is None:
        z_guess = complex(grid.inner(fam.ham.phi0, u))
    z_guess = complex(z_guess)
    if abs(z_guess) > fam.s_max:
        raise DomainError(f"|z_guess| = {abs(z_guess):.4g} outside the bound-state radius {fam.s_max:g}")
    radius = 0.5 * abs(z_guess) + 0.05
    z = z_guess
    history = []
    for it in range(max_iter + 1):
        Q = fam.Q(z)
        D = fam.DQ(z)
        v = u - Q
        f = _orthogonality(grid, v, D)
        res = float(np.max(np.abs(f)))
        history.append(res)
        if res < tol:
            break
        if it == max_iter:
            raise ConvergenceError(f"orthogonality Newton not converged in {max_iter} steps", history, z=z)
        M = _newton_matrix(grid, v, D, fam.D2Q(z))
        step = -np.linalg.solve(M, f)
        z_new = z + complex(step[0], step[1])
        off = z_new - z_guess
        if abs(off) > radius:
            z_new = z_guess + off * (radius / abs(off))
        if abs(z_new) > fam.s_max:
            raise DomainError(f"Newton iterate |z| = {abs(z_new):.4g} left the family range")
        z = z_new
    state = fam.state(z)
    v = u - state.Q
    f = _orthogonality(grid, v, state.DQ)
    if np.max(np.abs(f)) >= tol:
        raise ConvergenceError("orthogonality lost after forming v", history + [float(np.max(np.abs(f)))], z=z)
    return Decomposition(z, state, v, f, it, history, unorm, grid.h1(v))


# ----------------------------------------------------------------------
# modulation ODE


@dataclass
class ModulationODE:
    A: np.ndarray
    b: np.ndarray
    rhs: complex
    E: float
    cond: float


def ode_coefficients(dec: Decomposition, params: ModelParams, family: SmallSolitonFamily | None = None,
                     cond_max=COND_MAX) -> ModulationODE:
    """A and b of A (z' + iEz) = b at a converged decomposition."""
    st = dec.state
    grid = st.grid
    fam = family or family_for(params, grid)
    D = st.DQ
    A = -_newton_matrix(grid, dec.v, D, fam.D2Q(dec.z))
    G = remainder_G(dec.v, st.Q, params)
    b = np.array([grid.inner(G, D[0]).real, grid.inner(G, D[1]).real])
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > cond_max:
        raise IllConditioned(f"cond(A) = {cond:.3g} exceeds {cond_max:g}")
    w = np.linalg.solve(A, b)
    return ModulationODE(A, b, complex(w[0], w[1]), st.E, cond)


# ----------------------------------------------------------------------
# tracking along a trajectory


@dataclass
class ModulationTrajectory:
    times: np.ndarray
    z: np.ndarray
    E: np.ndarray
    zeta: np.ndarray
    rhs: np.ndarray
    ode_residual: np.ndarray
    v_h1: np.ndarray
    phi0_overlap: np.ndarray
    rhs_integral: np.ndarray
    truncated: bool = False
    message: str = ""

    @property
    def overlap_constant(self) -> float:
        """max |<phi0, v>| / (||v||_H1 |z|) over the run."""
        den = self.v_h1 * np.abs(self.z)
        ok = den > 1e-300
        return float(np.max(self.phi0_overlap[ok] / den[ok])) if np.any(ok) else 0.0

    @property
    def consistency(self) -> float:
        """max residual relative to max |A^{-1} b|."""
        scale = float(np.max(np.abs(self.rhs))) if self.rhs.size else 0.0
        r = float(np.max(self.ode_residual[1:])) if self.ode_residual.size > 1 else 0.0
        return r / scale if scale > 0 else (0.0 if r == 0 else math.inf)

    def rows(self):
        """CSV rows t, Re z, Im z, E, Re zeta, Im zeta, ode_residual."""
        return [(t, z.real, z.imag, E, c.real, c.imag, r)
                for t, z, E, c, r in zip(self.times, self.z, self.E, self.zeta, self.ode_residual)]


class ModulationTracker:
    """Streaming z(t) extraction by continuation; usable as an evolve observer.

    The ODE check compares the gauge-reduced parameter zeta with the
    trapezoid integral of its derivative exp(i Phi)(z' + iEz), so the fast
    rotation exp(-iEt) does not enter the finite difference.
    """

    def __init__(self, params: ModelParams, grid: SpatialGrid, tol=1e-10, delta_max=DELTA_MAX,
                 family: SmallSolitonFamily | None = None, z0=None):
        self.params, self.grid = params, grid
        self.tol, self.delta_max = tol, delta_max
        self.family = family or family_for(params, grid)
        self._z_next = z0
        self.times, self.z, self.E, self.zeta, self.rhs = [], [], [], [], []
        self.res, self.vh1, self.ov, self.rint = [], [], [], []
        self._phase = 0.0
        self.truncated = False
        self.message = ""
        self.last: Optional[Decomposition] = None
        self.last_ode: Optional[ModulationODE] = None

    def __call__(self, m, t, u):
        self.update(t, u)

    def update(self, t, u):
        if self.truncated:
            return
        try:
            dec = extract_z(u, self._z_next, self.params, self.grid, self.tol, self.family, self.delta_max)
            ode = ode_coefficients(dec, self.params, self.family)
        except DeltaNLSError as exc:
            self.truncated = True
            self.message = f"t = {t:.6g}: {exc}"
            return
        self._z_next = dec.z
        self.last, self.last_ode = dec, ode
        if self.times:
            dt = t - self.times[-1]
            self._phase += 0.5 * dt * (self.E[-1] + ode.E)
            zeta = dec.z * np.exp(1j * self._phase)
            d_prev = self.rhs[-1] * np.exp(1j * self._phase_prev)
            d_now = ode.rhs * np.exp(1j * self._phase)
            r = abs((zeta - self.zeta[-1]) / dt - 0.5 * (d_prev + d_now))
            self.rint.append(self.rint[-1] + 0.5 * dt * (abs(self.rhs[-1]) + abs(ode.rhs)))
        else:
            zeta = dec.z
            r = 0.0
            self.rint.append(0.0)
        self._phase_prev = self._phase
        self.times.append(float(t))
        self.z.append(dec.z)
        self.E.append(ode.E)
        self.zeta.append(zeta)
        self.rhs.append(ode.rhs)
        self.res.append(r)
        self.vh1.append(dec.v_h1)
        self.ov.append(abs(self.grid.inner(self.family.ham.phi0, dec.v)))

    def result(self) -> ModulationTrajectory:
        arr = lambda a, dt=float: np.array(a, dtype=dt)
        return ModulationTrajectory(arr(self.times), arr(self.z, complex), arr(self.E), arr(self.zeta, complex),
                                    arr(self.rhs, complex), arr(self.res), arr(self.vh1), arr(self.ov),
                                    arr(self.rint), self.truncated, self.message)


def track(traj, params: ModelParams, tol=1e-10, delta_max=DELTA_MAX, z0=None,
          family: SmallSolitonFamily | None = None) -> ModulationTrajectory:
    """z(t) at every stored snapshot, seeded by continuation."""
    if traj.snapshots is None:
        raise ParameterError("trajectory has no stored snapshots; use ModulationTracker as an observer")
    tr = ModulationTracker(params, traj.grid, tol, delta_max, family, z0)
    for t, u in zip(traj.times, traj.snapshots):
        tr.update(t, u)
        if tr.truncated:
            break
    return tr.result()


def z_asymptotic(mt: ModulationTrajectory) -> dict:
    """z_plus = zeta(T) with the Cauchy tail over [T/2, T]."""
    if mt.times.size == 0:
        return {"z_plus": complex("nan"), "tail": math.inf, "converged": False, "rate": math.nan,
                "z0": complex("nan"), "abs_change": math.nan}
    T = mt.times[-1]
    zT = mt.zeta[-1]
    late = mt.times >= 0.5 * T
    dev = np.abs(mt.zeta - zT)
    tail = float(np.max(dev[late]))
    # decay exponent of the running tail sup_{s>=t} |zeta(s) - zeta(T)|
    run = np.maximum.accumulate(dev[::-1])[::-1]
    sel = (mt.times > 0.05 * T) & (mt.times <= 0.5 * T) & (run > 0)
    rate = math.nan
    if np.count_nonzero(sel) >= 3:
        rate = float(-np.polyfit(np.log(mt.times[sel]), np.log(run[sel]), 1)[0])
    converged = (not mt.truncated) and tail <= abs(zT) / 10
    return {"z_plus": complex(zT), "tail": tail, "converged": bool(converged), "rate": rate,
            "z0": complex(mt.z[0]), "abs_change": float(abs(abs(zT) - abs(mt.z[0])))}
