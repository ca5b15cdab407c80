"""Nonlinear bound states Q solving H Q + mu |Q|^p Q = E Q.

Two descriptions are provided.  Closed-form profiles exist on both sides of
the linear eigenvalue -q^2/2; the small-amplitude family Q[z] = z phi0 + h is
built by a fixed-point iteration in the spectral basis of the discrete H,
together with its first and second derivatives in z.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.integrate import quad

from .errors import ConvergenceError, ParameterError, ThresholdOutsideRange
from .grid import Field, SpatialGrid
from .hamiltonian import DeltaHamiltonian, ModelParams, hamiltonian_for


def nonlinearity(Q, params: ModelParams):
    """F(Q) = mu |Q|^p Q."""
    return params.mu * np.abs(Q) ** params.p * Q


def nonlinearity_derivative(Q, w, params: ModelParams):
    """Real derivative of F at Q in direction w."""
    p = params.p
    a2 = np.abs(Q) ** 2
    return params.mu * (0.5 * (p + 2) * a2 ** (p // 2) * w + 0.5 * p * a2 ** (p // 2 - 1) * Q * Q * np.conj(w))


# ----------------------------------------------------------------------
# closed-form profiles


@dataclass(frozen=True)
class ClosedFormProfile:
    """Even bound state of the continuum problem at frequency E."""

    E: float
    params: ModelParams

    def __post_init__(self):
        q, mu, E = self.params.q, self.params.mu, self.E
        lin = -0.5 * q**2
        if mu < 0 and not E < lin:
            raise ParameterError(f"focusing profiles need E < {lin}, got {E}")
        if mu > 0 and not (lin < E <= 0):
            raise ParameterError(f"defocusing profiles need {lin} < E <= 0, got {E}")
        if mu < 0 and E == 0:
            raise ParameterError("no focusing profile at E = 0")

    @property
    def branch(self) -> str:
        if self.E == 0:
            return "zero-energy"
        return "focusing" if self.params.mu < 0 else "defocusing"

    @property
    def normalizable(self) -> bool:
        return self.branch != "zero-energy" or self.params.p < 4

    def _constants(self):
        p, q, mu, E = self.params.p, self.params.q, self.params.mu, self.E
        if self.E == 0:
            A = ((p + 2) / (p * p * mu)) ** (1.0 / p)
            return A, None, 2.0 / (p * abs(q))
        om = -E
        A = ((p + 2) * om / (2 * abs(mu))) ** (1.0 / p)
        beta = p * math.sqrt(om / 2)
        if mu < 0:
            c = math.atanh(abs(q) / math.sqrt(2 * om))
        else:
            c = math.atanh(math.sqrt(2 * om) / abs(q))
        return A, beta, c

    def __call__(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        p = self.params.p
        A, beta, c = self._constants()
        if self.branch == "zero-energy":
            return A * (ax + c) ** (-2.0 / p)
        arg = beta * ax + c
        if self.branch == "focusing":
            # sech^{2/p}, written to avoid overflow in cosh
            return A * (2.0 * np.exp(-arg) / (1.0 + np.exp(-2.0 * arg))) ** (2.0 / p)
        return A * (2.0 * np.exp(-arg) / (1.0 - np.exp(-2.0 * arg))) ** (2.0 / p)

    def at_origin(self) -> float:
        return float(self(0.0))

    def mass(self) -> float:
        """||Q_E||^2 on the real line by quadrature of the profile."""
        if not self.normalizable:
            return math.inf
        A, beta, c = self._constants()
        p = self.params.p
        if self.branch == "focusing":
            g = lambda s: (2.0 * math.exp(-s) / (1.0 + math.exp(-2.0 * s))) ** (4.0 / p)
        else:
            g = lambda s: (2.0 * math.exp(-s) / (1.0 - math.exp(-2.0 * s))) ** (4.0 / p)
        val, _ = quad(g, c, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
        return 2.0 * A * A * val / beta


def closed_form_Q(E: float, params: ModelParams, grid: SpatialGrid) -> Field:
    return Field(grid, ClosedFormProfile(E, params)(grid.x))


def elliptic_residual(Q, E, params: ModelParams, ham: DeltaHamiltonian) -> float:
    """L2 norm of H Q + mu |Q|^p Q - E Q with H applied spectrally."""
    Q = ham.grid.values(Q)
    r = ham.apply_H(Q) + nonlinearity(Q, params) - E * Q
    return ham.grid.l2(r)


def discrete_bound_state(E: float, params: ModelParams, grid: SpatialGrid, tol=1e-14, max_iter=500,
                         ham: DeltaHamiltonian | None = None) -> Field:
    """Focusing bound state of the discrete operator: H Q + mu |Q|^p Q = E Q on the grid.

    Petviashvili iteration Q <- m^gamma (H - E)^{-1} (-mu |Q|^p Q) with the
    stabilizing factor m = <Q, (H-E)Q> / <Q, -mu|Q|^p Q>, gamma = (p+1)/p,
    seeded by the closed-form profile.  This is the exact stationary state
    of the semi-discrete equation, so e^{-iEt} Q isolates time-stepping error.
    """
    if params.mu >= 0 or not E < params.bound_energy:
        raise ParameterError("discrete bound states are computed on the focusing branch below -q^2/2")
    ham = ham or hamiltonian_for(grid, params.q)
    Q = closed_form_Q(E, params, grid).values.real.copy()
    gamma = (params.p + 1) / params.p
    inv = lambda f: ham.apply_function(f, lambda lam: 1.0 / (lam - E)).real
    history = []
    for _ in range(max_iter):
        N = -params.mu * np.abs(Q) ** params.p * Q
        LQ = ham.apply_H(Q).real - E * Q
        m = float(grid.integrate(Q * LQ) / grid.integrate(Q * N))
        Q_new = m**gamma * inv(N)
        # the residual itself floors at rounding times the largest eigenvalue
        res = grid.l2(Q_new - Q) / grid.l2(Q_new)
        history.append(res)
        Q = Q_new
        if res < tol:
            return Field(grid, Q)
    raise ConvergenceError(f"discrete bound state not converged at E = {E:g}", history)


def jump_defect(Q, q: float, grid: SpatialGrid) -> float:
    """|Q'(0+) - Q'(0-) - 2 q Q(0)| from fourth-order one-sided differences."""
    Q = grid.values(Q)
    j, dx = grid.origin, grid.dx
    st = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12 * dx)
    right = st @ Q[j:j + 5]
    left = -(st @ Q[j:j - 5:-1])
    return float(abs(right - left - 2 * q * Q[j]))


# ----------------------------------------------------------------------
# small-amplitude family


@dataclass
class BoundState:
    """Point z on the small-soliton manifold with Q = z phi0 + h."""

    z: complex
    E: float
    Q: np.ndarray
    h: np.ndarray
    residual: float
    steps: int
    DQ: Optional[tuple] = None
    De: Optional[np.ndarray] = None
    grid: Optional[SpatialGrid] = field(default=None, repr=False)
    params: Optional[ModelParams] = field(default=None, repr=False)

    @property
    def e(self) -> float:
        return self.E - self.params.bound_energy


def _fixed_point(s, params, ham, tol, max_iter=200):
    """Real amplitude s > 0: iterate (e, h) -> (<phi0,F(Q)>/s, R_c[-P_c F(Q) + e h])."""
    phi = ham.phi0
    g = ham.grid
    h = np.zeros(g.N)
    e = float(g.inner(phi, nonlinearity(s * phi, params)).real / s)
    history = []
    relax = 1.0
    for it in range(1, max_iter + 1):
        Q = s * phi + h
        F = nonlinearity(Q, params)
        e_new = float(g.inner(phi, F).real / s)
        h_new = ham.reduced_resolvent(-F + e * h).real
        res = g.l2(h_new - h) + abs(e_new - e)
        history.append(res)
        h = h + relax * (h_new - h)
        e = e + relax * (e_new - e)
        if res < tol:
            return e, h, res, it
        if len(history) >= 6 and all(history[-i] > history[-i - 1] for i in range(1, 6)):
            if relax == 1.0:
                relax = 0.5
                history.clear()
                continue
            raise ConvergenceError(f"fixed point does not contract at |z| = {s:g}", history, z=s)
        if len(history) >= 3 and history[-1] > history[-2] < history[-3] and relax == 1.0:
            relax = 0.5
    raise ConvergenceError(f"fixed point not converged after {max_iter} steps at |z| = {s:g}", history, z=s)


def _derivative_real(s, e, h, params, ham, w, tol, max_iter=200):
    """Solve the linearized system at real amplitude s in direction w."""
    phi = ham.phi0
    g = ham.grid
    Q = s * phi + h
    Dh = np.zeros(g.N, dtype=complex)
    De = 0.0
    for it in range(max_iter):
        DQ = w * phi + Dh
        DF = nonlinearity_derivative(Q, DQ, params)
        De_new = (g.inner(phi, DF) - e * w) / s
        # De must be real; its imaginary part measures the solve error
        Dh_new = ham.reduced_resolvent(-DF + De_new.real * h + e * Dh)
        res = g.l2(Dh_new - Dh) + abs(De_new - De)
        Dh, De = Dh_new, De_new
        if res < tol:
            return w * phi + Dh, De
    raise ConvergenceError(f"derivative system not converged at |z| = {s:g}")


def solve_small_z(z, params: ModelParams, grid: SpatialGrid, tol=1e-12, z_max=0.2,
                  derivatives=True, ham: DeltaHamiltonian | None = None) -> BoundState:
    """Bound state Q[z] by the fixed-point iteration, gauge-rotated from |z|."""
    z = complex(z)
    s = abs(z)
    if s > z_max:
        raise ParameterError(f"|z| = {s:g} exceeds the contraction radius {z_max:g}")
    ham = ham or hamiltonian_for(grid, params.q)
    if s == 0:
        zero = np.zeros(grid.N, dtype=complex)
        st = BoundState(0j, params.bound_energy, zero, zero.copy(), 0.0, 0, grid=grid, params=params)
        if derivatives:
            st.DQ = (ham.phi0 + 0j, 1j * ham.phi0)
            st.De = np.zeros(2)
        return st
    e, h, res, steps = _fixed_point(s, params, ham, tol)
    ph = z / s
    Qs = s * ham.phi0 + h
    st = BoundState(z, params.bound_energy + e, ph * Qs, ph * h, res, steps, grid=grid, params=params)
    if derivatives:
        D1, De1 = _derivative_real(s, e, h, params, ham, 1.0, tol)
        D2, De2 = _derivative_real(s, e, h, params, ham, 1j, tol)
        # DQ[z] w = e^{i theta} DQ[s](e^{-i theta} w)
        c, sn = ph.real, ph.imag
        st.DQ = (ph * (c * D1 - sn * D2), ph * (sn * D1 + c * D2))
        # components of the real gradient of E at z
        g1, g2 = De1.real, De2.real
        st.De = np.array([g1 * ph.real - g2 * ph.imag, g1 * ph.imag + g2 * ph.real])
    return st


def apply_DQ(state: BoundState, w: complex) -> np.ndarray:
    """DQ[z] w = w1 D1Q + w2 D2Q with w = w1 + i w2."""
    D1, D2 = state.DQ
    return w.real * D1 + w.imag * D2


def derivative_DQ(state: BoundState):
    """(D1Q, D2Q, De) at the state's z, computing them if needed."""
    if state.DQ is None:
        new = solve_small_z(state.z, state.params, state.grid, derivatives=True)
        state.DQ, state.De = new.DQ, new.De
    return state.DQ[0], state.DQ[1], state.De


def dq_identity_defect(state: BoundState) -> float:
    """|| Q[z] + i DQ[z](i z) ||_L2, zero for the exact family."""
    D = apply_DQ(state, 1j * state.z)
    return state.grid.l2(state.Q + 1j * D)


def second_derivative_D2Q(state: BoundState, w1: complex, w2: complex, eps=None, tol=1e-13) -> np.ndarray:
    """D^2 Q[z](w1, w2) by centered differences of DQ in direction w2."""
    eps = eps if eps is not None else math.sqrt(max(tol, 1e-14)) * 10
    z = state.z
    kw = dict(params=state.params, grid=state.grid, tol=tol)
    plus = solve_small_z(z + eps * w2, **kw)
    minus = solve_small_z(z - eps * w2, **kw)
    return (apply_DQ(plus, w1) - apply_DQ(minus, w1)) / (2 * eps)


class SmallSolitonFamily:
    """Q[z] = z rho(|z|^2) with rho interpolated in sigma = |z|^2.

    rho(sigma) = Q[sqrt(sigma)] / sqrt(sigma) is a smooth real profile with
    rho(0) = phi0.  It is interpolated by Chebyshev polynomials on
    [0, s_max^2] from fixed-point solves at the Chebyshev nodes, and the
    derivatives in z follow from differentiating the interpolant, so first
    and second derivatives are mutually consistent to rounding.
    """

    def __init__(self, params: ModelParams, grid: SpatialGrid, s_max=0.2, degree=16, tol=1e-13,
                 ham: DeltaHamiltonian | None = None):
        self.params, self.grid = params, grid
        self.ham = ham or hamiltonian_for(grid, params.q)
        self.s_max = float(s_max)
        self.smax2 = self.s_max**2
        n = degree + 1
        xi = np.cos(np.pi * (np.arange(n) + 0.5) / n)
        sig = 0.5 * self.smax2 * (xi + 1)
        rho = np.empty((n, grid.N))
        ev = np.empty(n)
        for i, sg in enumerate(sig):
            s = math.sqrt(sg)
            e, h, _, _ = _fixed_point(s, params, self.ham, tol)
            rho[i] = self.ham.phi0 + h / s
            ev[i] = e
        self.nodes = sig
        self._c = C.chebfit(xi, rho, degree)
        self._ce = C.chebfit(xi, ev, degree)
        self._c1 = C.chebder(self._c) * (2.0 / self.smax2)
        self._c2 = C.chebder(self._c1) * (2.0 / self.smax2)
        self._ce1 = C.chebder(self._ce) * (2.0 / self.smax2)

    def _xi(self, sigma):
        if sigma > self.smax2 * (1 + 1e-12):
            raise ParameterError(f"|z| = {math.sqrt(sigma):g} outside the family range {self.s_max:g}")
        return 2.0 * sigma / self.smax2 - 1.0

    def rho(self, sigma, order=0):
        c = (self._c, self._c1, self._c2)[order]
        return C.chebval(self._xi(sigma), c)

    def energy(self, z) -> float:
        return self.params.bound_energy + float(C.chebval(self._xi(abs(z) ** 2), self._ce))

    def energy_gradient(self, z) -> np.ndarray:
        """(dE/dz1, dE/dz2) with z = z1 + i z2."""
        d = float(C.chebval(self._xi(abs(z) ** 2), self._ce1))
        return 2 * d * np.array([z.real, z.imag])

    def Q(self, z) -> np.ndarray:
        z = complex(z)
        return z * self.rho(abs(z) ** 2)

    def DQ(self, z):
        """(D1Q, D2Q) at z."""
        z = complex(z)
        sg = abs(z) ** 2
        r0, r1 = self.rho(sg), self.rho(sg, 1)
        # D_w Q = w rho + z rho' 2 Re(conj(z) w)
        return (r0 + z * r1 * 2 * z.real, 1j * r0 + z * r1 * 2 * z.imag)

    def D2Q(self, z):
        """2x2 nested list of D_j D_k Q at z."""
        z = complex(z)
        sg = abs(z) ** 2
        r1, r2 = self.rho(sg, 1), self.rho(sg, 2)
        ws = (1.0, 1j)
        out = [[None, None], [None, None]]
        for j, a in enumerate(ws):
            for k, b in enumerate(ws):
                ra = 2 * (np.conj(z) * a).real
                rb = 2 * (np.conj(z) * b).real
                out[j][k] = b * r1 * ra + a * r1 * rb + z * r2 * ra * rb + z * r1 * 2 * (np.conj(a) * b).real
        return out

    def state(self, z) -> BoundState:
        z = complex(z)
        Q = self.Q(z)
        st = BoundState(z, self.energy(z), Q, Q - z * self.ham.phi0, 0.0, 0, grid=self.grid, params=self.params)
        st.DQ = self.DQ(z)
        st.De = self.energy_gradient(z)
        return st


# ----------------------------------------------------------------------
# mass curve and the stability threshold


def mass_curve(E_values, params: ModelParams):
    """Rows (E, M(E)) with M = ||Q_E||^2 of the closed-form focusing profile."""
    if params.mu >= 0:
        raise ParameterError("the mass curve is defined on the focusing branch")
    E_values = np.asarray(E_values, dtype=float)
    if np.any(E_values >= params.bound_energy):
        raise ParameterError("frequencies must lie below -q^2/2")
    return np.array([(E, ClosedFormProfile(E, params).mass()) for E in E_values])


def mass_derivative(E, params: ModelParams, h=None) -> float:
    """Centered difference dM/dE."""
    lin = params.bound_energy
    h = h if h is not None else 1e-4 * max(1.0, abs(E))
    h = min(h, 0.5 * (lin - E))
    m = lambda e: ClosedFormProfile(e, params).mass()
    return (m(E + h) - m(E - h)) / (2 * h)


def find_E1(params: ModelParams, E_min=None, E_max=None, n_scan=200, bracket=1e-3):
    """Frequency where dM/dE changes sign on the focusing branch.

    Scans [E_min, E_max] (default [-50 q^2, -q^2/2 - 1e-3]) on a log-spaced
    grid in -E, then bisects until the bracket is shorter than ``bracket``.
    Returns (E1, (lo, hi)).  Raises ThresholdOutsideRange if dM/dE keeps one
    sign over the scanned range.
    """
    lin = params.bound_energy
    E_min = E_min if E_min is not None else 100.0 * lin
    E_max = E_max if E_max is not None else lin - 1e-3 * abs(lin)
    om = np.geomspace(-E_max, -E_min, n_scan)
    Es = -om[::-1]
    d = np.array([mass_derivative(E, params) for E in Es])
    idx = np.nonzero(np.sign(d[:-1]) != np.sign(d[1:]))[0]
    if idx.size == 0:
        raise ThresholdOutsideRange(
            f"dM/dE keeps sign {int(np.sign(d[0]))} on [{E_min:g}, {E_max:g}]; no threshold in range"
        )
    i = idx[-1]
    lo, hi = Es[i], Es[i + 1]
    dlo = d[i]
    while hi - lo > bracket:
        mid = 0.5 * (lo + hi)
        dm = mass_derivative(mid, params)
        if np.sign(dm) == np.sign(dlo):
            lo, dlo = mid, dm
        else:
            hi = mid
    return 0.5 * (lo + hi), (lo, hi)
