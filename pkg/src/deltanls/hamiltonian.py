"""The operator H = -1/2 d^2/dx^2 + q delta(x) on a periodic grid.

The discrete H is built so that its eigenvectors are known in closed form.
Split a field into even and odd parts about the origin and index the half
line by m = 0..M (M = N/2, node M is the box edge x = +-L).

* Odd sector: the plain Dirichlet Laplacian, eigenvectors sin(n pi m / M).
* Even sector: a second-difference operator with a point potential at the
  origin, chosen so that r^m (r = exp(q dx)) is an exact eigenvector, plus a
  mirror potential at the box edge so the remaining eigenvectors are the
  phase-shifted cosines cos(n pi m / M - beta_n), with
  tan(beta_n) = -sinh(|q| dx) / sin(n pi / M).  The mirror potential also
  carries one state localized at the box edge; it is given the Nyquist
  eigenvalue.

Continuum eigenvalues are assigned as k_n^2/2 with k_n = n pi / L, which
makes the transform reduce to the FFT Laplacian when q -> 0.  All transforms
are DCT-I / DST-I calls, so one application costs O(N log N), and the basis
is exactly orthonormal in the trapezoid inner product.  Linear flows are
therefore exactly unitary and satisfy the group law to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import fft as sfft
from scipy.special import wofz

from .errors import ParameterError, QuadratureBudgetError
from .grid import Field, SpatialGrid


@dataclass(frozen=True)
class ModelParams:
    """Constants of i u_t = H u + mu |u|^p u.

    ``linear=True`` is the only way to set mu = 0; it is used for the
    linear limits of the integrators.
    """

    q: float = -1.0
    p: int = 4
    mu: float = -1.0
    linear: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.q) and self.q < 0):
            raise ParameterError(f"q must be negative, got {self.q}")
        if int(self.p) != self.p or self.p < 4 or self.p % 2:
            raise ParameterError(f"p must be an even integer >= 4, got {self.p}")
        object.__setattr__(self, "p", int(self.p))
        if self.linear:
            if self.mu != 0:
                raise ParameterError("linear parameters must have mu = 0")
        elif not (np.isfinite(self.mu) and self.mu != 0):
            raise ParameterError(f"mu must be nonzero, got {self.mu}")

    @classmethod
    def free_flow(cls, q: float, p: int = 4) -> "ModelParams":
        return cls(q=q, p=p, mu=0.0, linear=True)

    @property
    def bound_energy(self) -> float:
        return -0.5 * self.q**2


# ----------------------------------------------------------------------
# scattering data and resolvent kernels (continuum formulas)


def reflection(k, q):
    k = np.asarray(k, dtype=float)
    return q / (1j * k - q)


def transmission(k, q):
    k = np.asarray(k, dtype=float)
    return 1j * k / (1j * k - q)


@dataclass(frozen=True)
class ScatteringData:
    q: float

    def r(self, k):
        return reflection(k, self.q)

    def t(self, k):
        return transmission(k, self.q)

    def jump_residual(self, k):
        """Jump-condition residual of the left-incident wave.

        u = e^{ikx} + r e^{-ikx} for x < 0 and t e^{ikx} for x > 0.
        """
        r, t = self.r(k), self.t(k)
        cont = (1 + r) - t
        jump = 1j * k * t - 1j * k * (1 - r) - 2 * self.q * t
        return np.abs(cont) + np.abs(jump)


def free_resolvent_kernel(lam, x, y, side=1):
    """R1(lam +- i0; x, y) = (i/k) exp(ik|x-y|) with k = +-sqrt(2 lam)."""
    k = side * np.sqrt(2.0 * np.asarray(lam, dtype=float))
    return 1j / k * np.exp(1j * k * np.abs(np.subtract(x, y)))


def delta_resolvent_correction(lam, x, y, q, side=1):
    """R2(lam +- i0; x, y) = (i/k) r(k) exp(ik(|x|+|y|))."""
    k = side * np.sqrt(2.0 * np.asarray(lam, dtype=float))
    r = q / (1j * k - q)
    return 1j / k * r * np.exp(1j * k * (np.abs(x) + np.abs(y)))


@dataclass(frozen=True)
class SpectralKernel:
    """Boundary values of the resolvent of H at lam > 0."""

    q: float
    lam: float
    side: int = 1

    def __call__(self, x, y):
        return free_resolvent_kernel(self.lam, x, y, self.side) + delta_resolvent_correction(
            self.lam, x, y, self.q, self.side
        )

    def density(self, x, y):
        """E(lam; x, y) = [R(lam+i0) - R(lam-i0)] / (2 pi i)."""
        plus = SpectralKernel(self.q, self.lam, 1)(x, y)
        minus = SpectralKernel(self.q, self.lam, -1)(x, y)
        return (plus - minus) / (2j * math.pi)


def spectral_density(lam, x, y, q):
    """Closed form of E(lam; x, y) = (1/(pi k)) [cos k(x-y) + Re(r e^{ik(|x|+|y|)})]."""
    k = np.sqrt(2.0 * np.asarray(lam, dtype=float))
    r = q / (1j * k - q)
    return (np.cos(k * np.subtract(x, y)) + np.real(r * np.exp(1j * k * (np.abs(x) + np.abs(y))))) / (
        math.pi * k
    )


def phi0_exact(q, x):
    """|q|^{1/2} exp(q|x|)."""
    if not q < 0:
        raise ParameterError(f"q must be negative, got {q}")
    return math.sqrt(-q) * np.exp(q * np.abs(np.asarray(x, dtype=float)))


# ----------------------------------------------------------------------
# discrete Hamiltonian


@dataclass(frozen=True)
class SpectralCoefficients:
    """Coordinates of a field in the eigenbasis of the discrete H.

    bound: phi0 coefficient; edge: box-edge state; even/odd: continuum
    coefficients at k_n = n pi / L, n = 1..M-1.
    """

    bound: complex
    edge: complex
    even: np.ndarray
    odd: np.ndarray

    def norm(self) -> float:
        return float(
            np.sqrt(
                abs(self.bound) ** 2 + abs(self.edge) ** 2 + np.sum(np.abs(self.even) ** 2) + np.sum(np.abs(self.odd) ** 2)
            )
        )

    def continuum_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.even) ** 2) + np.sum(np.abs(self.odd) ** 2)))


def _dct1(a):
    return sfft.dct(a, type=1)


def _dst1(a):
    return sfft.dst(a, type=1)


class DeltaHamiltonian:
    """Exact spectral representation of the discrete delta Hamiltonian."""

    def __init__(self, grid: SpatialGrid, q: float):
        if not q < 0:
            raise ParameterError(f"q must be negative, got {q}")
        if grid.N < 8:
            raise ParameterError("grid too small for the half-line transforms")
        self.grid = grid
        self.q = float(q)
        M = grid.M
        dx = grid.dx
        self.M = M
        n = np.arange(1, M)
        self.theta = np.pi * n / M
        self.k = np.pi * n / grid.L
        a = -self.q * dx
        self.a = a
        s = math.sinh(a)
        den = np.hypot(np.sin(self.theta), s)
        self.cos_beta = np.sin(self.theta) / den
        self.sin_beta = -s / den
        self.eig_bound = -0.5 * self.q**2
        self.eig_edge = 0.5 * (np.pi / dx) ** 2
        self.eig_cont = 0.5 * self.k**2
        m = np.arange(M + 1)
        w = np.ones(M + 1)
        w[0] = w[-1] = 0.5
        self._w = w
        b = np.exp(self.q * dx * m)
        self._phi_half = b / math.sqrt(2 * dx * np.sum(w * b * b))
        e = (-1.0) ** (M - m) * np.exp(self.q * dx * (M - m))
        self._edge_half = e / math.sqrt(2 * dx * np.sum(w * e * e))
        self._pref = dx / math.sqrt(grid.L)
        self._phase_cache = {}

    # ----- parity split -------------------------------------------------
    def _split(self, f):
        f = self.grid.values(f)
        M = self.M
        pos = np.concatenate([f[M:], f[:1]])
        neg = f[M::-1]
        return 0.5 * (pos + neg), 0.5 * (pos - neg)

    def _join(self, e, o):
        M = self.M
        out = np.empty(2 * M, dtype=np.result_type(e, o, np.complex128))
        out[M:] = e[:M] + o[:M]
        out[:M + 1] = (e - o)[::-1]
        return out

    # ----- eigenvectors --------------------------------------------------
    @cached_property
    def phi0(self) -> np.ndarray:
        """Normalized bound state; samples are proportional to exp(q|x|)."""
        v = self._join(self._phi_half, np.zeros(self.M + 1)).real.copy()
        v.flags.writeable = False
        return v

    @cached_property
    def edge_state(self) -> np.ndarray:
        v = self._join(self._edge_half, np.zeros(self.M + 1)).real.copy()
        v.flags.writeable = False
        return v

    def continuum_mode(self, n: int, parity: str = "even") -> np.ndarray:
        """Normalized continuum eigenvector with frequency n pi / L."""
        m = np.arange(self.M + 1)
        th = self.theta[n - 1]
        if parity == "even":
            half = np.cos(th * m) * self.cos_beta[n - 1] + np.sin(th * m) * self.sin_beta[n - 1]
            return self._join(half / math.sqrt(self.grid.L), np.zeros(self.M + 1)).real
        half = np.sin(th * m)
        return self._join(np.zeros(self.M + 1), half / math.sqrt(self.grid.L)).real

    def tridiagonal_even_operator(self) -> np.ndarray:
        """Dense even-sector matrix whose eigenvectors are the even basis.

        Acts on half-line samples m = 0..M with reflecting closures; its
        eigenvalues for the continuum are (1 - cos theta_n)/dx^2, which the
        transform maps to theta_n^2 / (2 dx^2).
        """
        M, dx = self.M, self.grid.dx
        A = np.zeros((M + 1, M + 1))
        for m in range(M + 1):
            A[m, m] = 1.0 / dx**2
            if m > 0:
                A[m, m - 1] -= 0.5 / dx**2
            else:
                A[m, 1] -= 0.5 / dx**2
            if m < M:
                A[m, m + 1] -= 0.5 / dx**2
            else:
                A[m, M - 1] -= 0.5 / dx**2
        A[0, 0] -= math.sinh(self.a) / dx**2
        A[M, M] += math.sinh(self.a) / dx**2
        return A

    # ----- transforms ----------------------------------------------------
    def coefficients(self, f) -> SpectralCoefficients:
        e, o = self._split(f)
        dx = self.grid.dx
        wt = 2 * dx * self._w
        bound = np.sum(wt * self._phi_half * e)
        edge = np.sum(wt * self._edge_half * e)
        ce = _dct1(e)[1:-1]
        se = _dst1(e[1:-1])
        even = self._pref * (self.cos_beta * ce + self.sin_beta * se)
        odd = self._pref * _dst1(o[1:-1])
        return SpectralCoefficients(complex(bound), complex(edge), even, odd)

    def synthesize(self, c: SpectralCoefficients) -> np.ndarray:
        M = self.M
        sl = 0.5 / math.sqrt(self.grid.L)
        a = np.zeros(M + 1, dtype=np.result_type(c.even, float))
        a[1:-1] = c.even * self.cos_beta
        e = sl * _dct1(a)
        e[1:-1] += sl * _dst1(c.even * self.sin_beta)
        e = e + c.bound * self._phi_half + c.edge * self._edge_half
        o = np.zeros(M + 1, dtype=e.dtype)
        o[1:-1] = sl * _dst1(c.odd)
        return self._join(e, o)

    def distorted_ft(self, f) -> np.ndarray:
        """Continuum coefficients as an array of shape (2, M-1): even then odd."""
        c = self.coefficients(f)
        return np.stack([c.even, c.odd])

    def inverse_distorted_ft(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs)
        return self.synthesize(SpectralCoefficients(0.0, 0.0, coeffs[0], coeffs[1]))

    # ----- spectral calculus --------------------------------------------
    def apply_function(self, f, g, include_bound=True) -> np.ndarray:
        """g(H) f for a vectorized scalar function g."""
        c = self.coefficients(f)
        gc = g(self.eig_cont)
        b = c.bound * g(self.eig_bound) if include_bound else 0.0
        return self.synthesize(SpectralCoefficients(b, c.edge * g(self.eig_edge), c.even * gc, c.odd * gc))

    def _phases(self, t):
        key = float(t)
        ph = self._phase_cache.get(key)
        if ph is None:
            ph = (
                np.exp(-1j * t * self.eig_bound),
                np.exp(-1j * t * self.eig_edge),
                np.exp(-1j * t * self.eig_cont),
            )
            if len(self._phase_cache) > 16:
                self._phase_cache.clear()
            self._phase_cache[key] = ph
        return ph

    def propagate_linear(self, f, t) -> np.ndarray:
        """exp(-itH) f."""
        if t == 0:
            return np.array(self.grid.values(f), dtype=complex)
        pb, pe, pc = self._phases(t)
        c = self.coefficients(f)
        return self.synthesize(SpectralCoefficients(c.bound * pb, c.edge * pe, c.even * pc, c.odd * pc))

    def propagate_pc(self, f, t) -> np.ndarray:
        """exp(-itH) P_c f."""
        pb, pe, pc = self._phases(t)
        c = self.coefficients(f)
        return self.synthesize(SpectralCoefficients(0.0, c.edge * pe, c.even * pc, c.odd * pc))

    def project_pc(self, f) -> np.ndarray:
        f = self.grid.values(f)
        return f - self.grid.inner(self.phi0, f) * self.phi0

    def apply_H(self, f) -> np.ndarray:
        return self.apply_function(f, lambda lam: lam)

    def reduced_resolvent(self, f) -> np.ndarray:
        """(H + q^2/2)^{-1} P_c f."""
        shift = 0.5 * self.q**2
        return self.apply_function(f, lambda lam: 1.0 / (lam + shift), include_bound=False)

    def quadratic_form(self, f) -> float:
        """<f, H f> from the spectral coordinates."""
        c = self.coefficients(f)
        return float(
            self.eig_bound * abs(c.bound) ** 2
            + self.eig_edge * abs(c.edge) ** 2
            + np.sum(self.eig_cont * (np.abs(c.even) ** 2 + np.abs(c.odd) ** 2))
        )

    def energy_form(self, f, params: ModelParams | None = None) -> float:
        """1/2 <f, H f> + mu/(p+2) int |f|^{p+2}."""
        val = 0.5 * self.quadratic_form(f)
        if params is not None and params.mu != 0:
            v = self.grid.values(f)
            val += params.mu / (params.p + 2) * float(self.grid.integrate(np.abs(v) ** (params.p + 2)).real)
        return val


def phi0(params: ModelParams, grid: SpatialGrid) -> Field:
    return Field(grid, hamiltonian_for(grid, params.q).phi0)


_CACHE: dict = {}


def hamiltonian_for(grid: SpatialGrid, q: float) -> DeltaHamiltonian:
    """Shared DeltaHamiltonian instance per (grid, q)."""
    key = (grid.L, grid.N, float(q))
    ham = _CACHE.get(key)
    if ham is None:
        if len(_CACHE) > 8:
            _CACHE.clear()
        ham = DeltaHamiltonian(grid, q)
        _CACHE[key] = ham
    return ham


# ----------------------------------------------------------------------
# quadrature oracle


def _gl_panels(edges, order):
    xg, wg = leggauss(order)
    a, b = np.asarray(edges[:-1]), np.asarray(edges[1:])
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * xg[None, :]
    weights = half[:, None] * wg[None, :]
    return nodes.ravel(), weights.ravel()


def reflected_kernel(s, t, q):
    """(1/pi) int_0^inf exp(-itk^2/2) Re(r(k) exp(iks)) dk for s >= 0.

    This is the lambda-integral of the reflected part of E(lam; x, y) with
    s = |x| + |y|.  Closing the contour gives -(kappa/2) exp(is^2/2t) w(iz)
    with kappa = |q|, iz = exp(i pi/4)(i kappa t - s)/sqrt(2t) and w the
    Faddeeva function; at t = 0 it reduces to -kappa exp(-kappa s), i.e. the
    bound-state projector with a minus sign.
    """
    kappa = -q
    s = np.asarray(s, dtype=float)
    if t == 0:
        return -kappa * np.exp(-kappa * s) + 0j
    if t < 0:
        return np.conj(reflected_kernel(s, -t, q))
    zeta = np.exp(0.25j * np.pi) * (1j * kappa * t - s) / math.sqrt(2.0 * t)
    return -0.5 * kappa * np.exp(0.5j * s**2 / t) * wofz(zeta)


@dataclass
class OracleResult:
    values: np.ndarray
    error_estimate: float
    refinement_error: float
    truncation_error: float
    k_max: float
    n_k: int
    n_y: int


def _oracle_once(func, x, t, q, Ly, k_max, n_k_panels, n_y_panels, order):
    y, wy = _gl_panels(np.linspace(0.0, Ly, n_y_panels + 1), order)
    fp = np.asarray(func(y), dtype=complex)
    fm = np.asarray(func(-y), dtype=complex)
    fe = (fp + fm) * wy
    fo = (fp - fm) * wy
    # free part: lambda = k^2/2 quadrature of cos k(x-y) / (pi k), panels graded towards k = 0
    grade = [0.0] + list(2.0 ** -np.arange(10, -1, -1))
    uniform = np.linspace(1.0, k_max, n_k_panels + 1)[1:]
    k, wk = _gl_panels(np.array(grade + list(uniform)), order)
    C = np.cos(np.outer(k, y)) @ fe
    S = np.sin(np.outer(k, y)) @ fo
    ph = np.exp(-0.5j * t * k**2) * wk / math.pi
    integrand = np.cos(np.outer(x, k)) * C + np.sin(np.outer(x, k)) * S
    free = integrand @ ph
    upper = k >= 0.5 * k_max
    tail = integrand[:, upper] @ ph[upper]
    # reflected part: lambda-integral in closed form, y-integral by quadrature
    refl = reflected_kernel(np.abs(x)[:, None] + y[None, :], t, q) @ fe
    return free + refl, tail


def spectral_quadrature_oracle(func, t, grid: SpatialGrid, q: float, tol=1e-6, k_max=40.0,
                               y_extent=None, max_refinements=2) -> OracleResult:
    """Reference exp(-itH) P_c f built directly from the spectral measure.

    Stone's formula gives E(lam; x, y) = (1/(pi k))[cos k(x-y) + Re(r(k) e^{ik(|x|+|y|)})]
    with k = sqrt(2 lam).  The free term is integrated in k by Gauss-Legendre
    panels graded towards k = 0 and truncated at ``k_max``; the reflected term
    is integrated in k exactly (see ``reflected_kernel``) because for data with
    f(0) != 0 its k-integrand decays only like k^-2.  The y-integrals use
    Gauss-Legendre panels on [0, y_extent] after folding the two half lines.

    ``func`` evaluates the data at arbitrary points and must be negligible
    beyond ``y_extent`` (default: the grid half width).  The error estimate
    is the larger of the change under doubling all panel counts and the free
    contribution from [k_max/2, k_max]; if it cannot be pushed below ``tol``
    a QuadratureBudgetError is raised.  Intended for N <= 512 output points.
    """
    x = grid.x
    Ly = float(y_extent or grid.L)
    order = 16
    # panels short enough to resolve the chirp exp(-itk^2/2) and the kernel oscillation
    n_k = max(16, int(math.ceil(k_max * max(abs(t) * k_max, grid.L) / (2 * math.pi))))
    osc = 2 * Ly / abs(t) if t else 0.0
    n_y = max(16, int(math.ceil(Ly * max(k_max, osc) / (2 * math.pi))))
    prev, _ = _oracle_once(func, x, t, q, Ly, k_max, n_k, n_y, order)
    err = trunc = np.inf
    for _ in range(max_refinements):
        n_k *= 2
        n_y *= 2
        cur, tail = _oracle_once(func, x, t, q, Ly, k_max, n_k, n_y, order)
        ref = float(np.max(np.abs(cur - prev)))
        trunc = float(np.max(np.abs(tail)))
        err = max(ref, trunc)
        prev = cur
        if ref < tol:
            break
    if err >= tol:
        raise QuadratureBudgetError(
            f"oracle error estimate {err:.3e} above tolerance {tol:.1e} "
            f"(refinement {ref:.1e}, truncation {trunc:.1e})"
        )
    return OracleResult(cur, err, ref, trunc, k_max, n_k * order, 2 * n_y * order)
