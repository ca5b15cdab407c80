"""Space-time norms of the radiation, the linear estimates as empirical ratios,
and the scattering state w(t) = exp(itH) P_c v(t).

Time integrals use the composite trapezoid rule on the uniform output grid.
Reversed norms L_x^p L_t^2 are accumulated pointwise in x and reduced over x
at the end, so long runs can be processed one snapshot at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math
from typing import Optional

import numpy as np
from scipy import stats

from .errors import ParameterError, StructuralError
from .grid import SpatialGrid, japanese
from .hamiltonian import DeltaHamiltonian, ModelParams, hamiltonian_for
from .modulation import ModulationTrajectory, ModulationTracker, family_for, z_asymptotic


# ----------------------------------------------------------------------
# generic mixed norms


def _time_weights(n, dt):
    if n < 1:
        raise StructuralError("empty time window")
    w = np.full(n, float(dt))
    if n == 1:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * dt
    return w


def _lp_time(vals, w, p):
    """Trapezoid L^p_t of nonnegative samples along axis 0."""
    if math.isinf(p):
        return np.max(vals, axis=0)
    return np.tensordot(w, vals**p, axes=(0, 0)) ** (1.0 / p)


def _lp_space(vals, dx, p):
    if math.isinf(p):
        return np.max(vals, axis=-1)
    return (dx * np.sum(vals**p, axis=-1)) ** (1.0 / p)


def mixed_norm(F, grid: SpatialGrid, dt: float, p_t: float, p_x: float, time_outer=True, weight=None) -> float:
    """||weight F||_{L_t^{p_t} L_x^{p_x}} (time_outer) or ||.||_{L_x^{p_x} L_t^{p_t}}.

    F has shape (n_times, N) on a uniform time grid with spacing dt.
    """
    F = np.abs(np.asarray(F))
    if F.ndim != 2 or F.shape[1] != grid.N:
        raise StructuralError(f"expected shape (n_times, {grid.N}), got {F.shape}")
    if weight is not None:
        F = F * weight
    w = _time_weights(F.shape[0], dt)
    if time_outer:
        return float(_lp_time(_lp_space(F, grid.dx, p_x), w, p_t))
    return float(_lp_space(_lp_time(F, w, p_t), grid.dx, p_x))


class _TimeSum:
    """Streaming trapezoid sum of a (possibly array-valued) nonnegative integrand."""

    def __init__(self, dt):
        self.dt = float(dt)
        self.total = 0.0
        self.first = None
        self.last = None
        self.n = 0

    def add(self, val):
        if self.first is None:
            self.first = val
        self.total = self.total + val
        self.last = val
        self.n += 1

    def value(self):
        if self.n == 0:
            raise StructuralError("empty time window")
        if self.n == 1:
            return 0.0 * self.first
        return self.dt * (self.total - 0.5 * (self.first + self.last))


@dataclass
class XNorm:
    h1: float
    strichartz: float
    weighted_smoothing: float
    derivative_smoothing: float
    T: float

    @property
    def total(self) -> float:
        return self.h1 + self.strichartz + self.weighted_smoothing + self.derivative_smoothing

    def as_dict(self):
        d = asdict(self)
        d["total"] = self.total
        return d


class XNormAccumulator:
    """Running X-norm: sup_t H^1, L_t^4 L_x^inf, <x>^alpha weighted and derivative L_x^inf L_t^2.

    ``alpha`` is the local-smoothing weight exponent (-3/2 for the X norm,
    -1 for the inhomogeneous estimate).
    """

    def __init__(self, grid: SpatialGrid, dt: float, alpha=-1.5):
        self.grid = grid
        self.dt = float(dt)
        self.weight2 = japanese(grid.x, 2 * alpha)
        self.sup_h1 = 0.0
        self.l4 = _TimeSum(dt)
        self.ls = _TimeSum(dt)
        self.lsd = _TimeSum(dt)
        self.sup_series = []

    def add(self, v):
        g = self.grid
        v = np.asarray(g.values(v))
        self.sup_h1 = max(self.sup_h1, g.sobolev(v, 1.0))
        s = float(np.max(np.abs(v)))
        self.sup_series.append(s)
        self.l4.add(s**4)
        a2 = np.abs(v) ** 2
        self.ls.add(self.weight2 * a2)
        self.lsd.add(np.abs(g.derivative(v)) ** 2)

    @property
    def n(self):
        return self.l4.n

    def report(self) -> XNorm:
        return XNorm(
            self.sup_h1,
            float(self.l4.value()) ** 0.25,
            float(np.sqrt(np.max(self.ls.value()))),
            float(np.sqrt(np.max(self.lsd.value()))),
            self.dt * max(self.n - 1, 0),
        )


def x_norm(v_snapshots, grid: SpatialGrid, dt: float, window=None, alpha=-1.5) -> XNorm:
    """X-norm components of snapshots on a uniform time grid, optionally on [t0, t1]."""
    snaps = np.asarray(v_snapshots)
    if snaps.ndim != 2:
        raise StructuralError("snapshots must be a 2-d array (n_times, N)")
    if window is not None:
        t = dt * np.arange(snaps.shape[0])
        sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
        snaps = snaps[sel]
    if snaps.shape[0] == 0:
        raise StructuralError("empty time window")
    acc = XNormAccumulator(grid, dt, alpha)
    for v in snaps:
        acc.add(v)
    return acc.report()


# ----------------------------------------------------------------------
# modulation-parameter norms


@dataclass
class YNorm:
    l1: float
    l2: float
    l1_fd: float
    l2_fd: float

    @property
    def total(self) -> float:
        return self.l1 + self.l2


def y_norm(mt: ModulationTrajectory) -> YNorm:
    """L^1 and L^2 in time of |z' + iEz| from A^{-1}b, and from differences of zeta."""
    n = mt.times.size
    if n < 2:
        return YNorm(0.0, 0.0, 0.0, 0.0)
    dt = np.diff(mt.times)
    a = np.abs(mt.rhs)
    l1 = float(np.sum(0.5 * dt * (a[1:] + a[:-1])))
    l2 = float(math.sqrt(np.sum(0.5 * dt * (a[1:] ** 2 + a[:-1] ** 2))))
    # |zeta'| = |z' + iEz|; one-sided differences on each interval
    d = np.abs(np.diff(mt.zeta)) / dt
    return YNorm(l1, l2, float(np.sum(dt * d)), float(math.sqrt(np.sum(dt * d**2))))


@dataclass
class ZWNorms:
    Z: float
    W: float
    z_sup: float

    @property
    def Z_ratio(self) -> float:
        return self.Z / self.z_sup if self.z_sup > 0 else 0.0


class ZWAccumulator:
    """Z and W norms of Q[z(t)] and DQ[z(t)].

    For DQ the pointwise size is max(|D_1Q|, |D_2Q|).
    """

    def __init__(self, grid: SpatialGrid):
        self.grid = grid
        self.w52 = japanese(grid.x, 2.5)
        self.w1 = japanese(grid.x, 1.0)
        self.supQ = np.zeros(grid.N)
        self.supdQ = 0.0
        self.supdQ2 = 0.0
        self.supDQ = np.zeros(grid.N)
        self.supDQ2 = 0.0
        self.supdDQ2 = 0.0
        self.z_sup = 0.0

    def add(self, z, Q, DQ):
        g = self.grid
        self.z_sup = max(self.z_sup, abs(z))
        self.supQ = np.maximum(self.supQ, self.w52 * np.abs(Q))
        dQ = g.derivative(Q)
        self.supdQ = max(self.supdQ, float(np.max(np.abs(dQ))))
        self.supdQ2 = max(self.supdQ2, g.l2(dQ))
        D = np.maximum(np.abs(DQ[0]), np.abs(DQ[1]))
        self.supDQ = np.maximum(self.supDQ, self.w1 * D)
        self.supDQ2 = max(self.supDQ2, max(g.l2(self.w1 * DQ[0]), g.l2(self.w1 * DQ[1])))
        self.supdDQ2 = max(self.supdDQ2, max(g.l2(g.derivative(DQ[0])), g.l2(g.derivative(DQ[1]))))

    def report(self) -> ZWNorms:
        dx = self.grid.dx
        Z = dx * np.sum(self.supQ) + float(np.max(self.supQ)) + self.supdQ + self.supdQ2
        W = dx * np.sum(self.supDQ) + self.supDQ2 + self.supdDQ2
        return ZWNorms(float(Z), float(W), self.z_sup)


def zw_norms(mt: ModulationTrajectory, params: ModelParams, grid: SpatialGrid, family=None) -> ZWNorms:
    """Z and W along a tracked trajectory, rebuilding Q[z(t)] from the family."""
    fam = family or family_for(params, grid)
    acc = ZWAccumulator(grid)
    for z in mt.z:
        acc.add(z, fam.Q(z), fam.DQ(z))
    return acc.report()


# ----------------------------------------------------------------------
# scattering state


@dataclass
class ScatteringReport:
    times: np.ndarray
    v_plus: np.ndarray = field(repr=False)
    cauchy_tail: np.ndarray
    phi0_component: np.ndarray
    spearman_late: float

    def tail_decreasing(self) -> bool:
        return bool(self.spearman_late < 0)


class ScatteringAccumulator:
    """Checkpoints of w(t) = exp(itH) P_c v(t) and the phi0 component of v."""

    def __init__(self, grid: SpatialGrid, q: float, every: int = 1, ham: DeltaHamiltonian | None = None):
        self.grid = grid
        self.ham = ham or hamiltonian_for(grid, q)
        self.every = max(1, int(every))
        self.count = 0
        self.times, self.w, self.phi_comp = [], [], []
        self._phi_h1 = grid.sobolev(self.ham.phi0, 1.0)

    def add(self, t, v, force=False):
        v = np.asarray(self.grid.values(v))
        take = force or self.count % self.every == 0
        self.count += 1
        if not take:
            return
        if self.times and abs(self.times[-1] - t) < 1e-12:
            return
        self.times.append(float(t))
        self.w.append(self.ham.propagate_pc(v, -t))
        self.phi_comp.append(abs(self.grid.inner(self.ham.phi0, v)) * self._phi_h1)

    def report(self) -> ScatteringReport:
        if not self.times:
            raise StructuralError("no checkpoints recorded")
        t = np.array(self.times)
        wT = self.w[-1]
        tail = np.array([self.grid.sobolev(w - wT, 1.0) for w in self.w])
        late = (t >= 0.5 * t[-1]) & (t < t[-1])
        rho = math.nan
        if np.count_nonzero(late) >= 3:
            rho = float(stats.spearmanr(t[late], tail[late])[0])
        return ScatteringReport(t, wT, tail, np.array(self.phi_comp), rho)


def extract_scattering_state(traj, mt: ModulationTrajectory, params: ModelParams, family=None,
                             checkpoints: int = 200) -> ScatteringReport:
    """w(t_m) = exp(i t_m H) P_c v(t_m) at up to ``checkpoints`` stored snapshots."""
    if traj.snapshots is None:
        raise ParameterError("trajectory has no stored snapshots; stream with RunDiagnostics instead")
    grid = traj.grid
    fam = family or family_for(params, grid)
    n = mt.times.size
    every = max(1, int(math.ceil(n / checkpoints)))
    acc = ScatteringAccumulator(grid, params.q, every, fam.ham)
    for m in range(n):
        v = traj.snapshots[m] - fam.Q(mt.z[m])
        acc.add(mt.times[m], v, force=(m == n - 1))
    return acc.report()


# ----------------------------------------------------------------------
# streaming run diagnostics


class RunDiagnostics:
    """evolve observer: tracks z(t) and accumulates X (for v and P_c v), Z, W and w(t)."""

    def __init__(self, params: ModelParams, grid: SpatialGrid, dt_out: float, checkpoints_every: int = 20,
                 tol=1e-10, delta_max=0.2):
        self.params, self.grid = params, grid
        self.family = family_for(params, grid)
        self.tracker = ModulationTracker(params, grid, tol, delta_max, self.family)
        self.xv = XNormAccumulator(grid, dt_out)
        self.xpc = XNormAccumulator(grid, dt_out)
        self.zw = ZWAccumulator(grid)
        self.scat = ScatteringAccumulator(grid, params.q, checkpoints_every, self.family.ham)
        self.v_h1_sup = 0.0
        self._last_t = None
        self._last_v = None

    def __call__(self, m, t, u):
        self.tracker.update(t, u)
        if self.tracker.truncated:
            return
        dec = self.tracker.last
        v = dec.v
        self.xv.add(v)
        self.xpc.add(self.family.ham.project_pc(v))
        self.zw.add(dec.z, dec.state.Q, dec.state.DQ)
        self.scat.add(t, v)
        self.v_h1_sup = max(self.v_h1_sup, self.grid.sobolev(v, 1.0))
        self._last_t, self._last_v = t, v

    def finish(self) -> dict:
        if self._last_v is not None:
            self.scat.add(self._last_t, self._last_v, force=True)
        mt = self.tracker.result()
        out = {
            "modulation": mt,
            "X": self.xv.report() if self.xv.n else None,
            "X_pc": self.xpc.report() if self.xpc.n else None,
            "Y": y_norm(mt),
            "ZW": self.zw.report(),
            "z_asymptotic": z_asymptotic(mt),
            "scattering": self.scat.report() if self.scat.times else None,
            "v_h1_sup": self.v_h1_sup,
        }
        return out


def bootstrap_constants(X: float, Y: float, Z: float, W: float, v0_h1: float, p: int) -> dict:
    """Constants C2, C3 that make the two bootstrap inequalities hold with equality."""
    rhs2 = W * (X**2 * Z ** (p - 1) + X ** (p + 1))
    rhs3 = v0_h1 + Y * W + X * Z**p + X ** (p + 1)
    return {"C_Y": Y / rhs2 if rhs2 > 0 else math.inf, "C_X": X / rhs3 if rhs3 > 0 else math.inf}


# ----------------------------------------------------------------------
# linear estimates as empirical ratios


@dataclass
class InequalityCheck:
    name: str
    ensemble: str
    ratios: np.ndarray
    exponent: Optional[float] = None
    exponents: Optional[np.ndarray] = None

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))

    def as_dict(self):
        d = {"name": self.name, "ensemble": self.ensemble, "max_ratio": self.max_ratio,
             "ratios": [float(r) for r in self.ratios]}
        if self.exponent is not None:
            d["exponent"] = float(self.exponent)
        if self.exponents is not None:
            d["exponents"] = [float(e) for e in self.exponents]
        return d


@dataclass(frozen=True)
class LinearCheckConfig:
    q: float = -1.0
    L: float = 200.0
    N: int = 4096
    T: float = 50.0
    dt: float = 0.05
    n_samples: int = 20
    seed: int = 0
    width_range: tuple = (0.3, 0.8)
    center_range: tuple = (-2.0, 2.0)
    fit_window: tuple = (1.0, 50.0)
    forcing_T: float = 5.0
    checks: tuple = ("dispersive", "strichartz", "smoothing", "duhamel")


def bump_ensemble(cfg: LinearCheckConfig, grid: SpatialGrid):
    """Seeded complex Gaussian bumps; yields (description, samples)."""
    rng = np.random.default_rng(cfg.seed)
    out = []
    for _ in range(cfg.n_samples):
        w = rng.uniform(*cfg.width_range)
        c = rng.uniform(*cfg.center_range)
        k0 = rng.uniform(-1.0, 1.0)
        ph = rng.uniform(0, 2 * np.pi)
        out.append(np.exp(-0.5 * ((grid.x - c) / w) ** 2 + 1j * (k0 * grid.x + ph)))
    desc = (f"{cfg.n_samples} Gaussians, seed {cfg.seed}, widths {cfg.width_range}, centers {cfg.center_range}, "
            f"grid L={cfg.L} N={cfg.N}, horizon T={cfg.T}, dt={cfg.dt}")
    return desc, out


def _fit_exponent(t, y, window):
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12) & (y > 0)
    if np.count_nonzero(sel) < 3:
        return math.nan
    return float(np.polyfit(np.log(t[sel]), np.log(y[sel]), 1)[0])


def _forcing_profile(t, T_f):
    """Smooth bump in time supported on [0, T_f]."""
    s = np.clip(t / T_f, 0.0, 1.0)
    return np.sin(np.pi * s) ** 2


def check_linear_estimates(cfg: LinearCheckConfig = LinearCheckConfig(), samples=None) -> list:
    """Empirical ratios LHS/RHS for the dispersive, Strichartz and smoothing bounds."""
    grid = SpatialGrid(cfg.L, cfg.N)
    ham = hamiltonian_for(grid, cfg.q)
    desc, ens = bump_ensemble(cfg, grid)
    if samples is not None:
        ens = [np.asarray(grid.values(s), dtype=complex) for s in samples]
        desc = f"{len(ens)} supplied samples, grid L={cfg.L} N={cfg.N}, horizon T={cfg.T}, dt={cfg.dt}"
    n_t = int(round(cfg.T / cfg.dt)) + 1
    times = cfg.dt * np.arange(n_t)
    step = lambda f: ham.propagate_linear(f, cfg.dt)
    res = {k: [] for k in ("disp", "str", "ls1", "ls2", "s31", "s32", "cstr", "str_inh")}
    exps, sup_curves = [], []
    for f in ens:
        l1 = float(grid.integrate(np.abs(f)))
        l2 = grid.l2(f)
        h12 = grid.sobolev(f, 0.5)
        u = ham.project_pc(f)
        acc = XNormAccumulator(grid, cfg.dt)
        sups = np.empty(n_t)
        for m in range(n_t):
            if m:
                u = step(u)
            acc.add(u)
            sups[m] = float(np.max(np.abs(u)))
        rep = acc.report()
        sup_curves.append(sups / l1 if l1 > 0 else sups)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(times > 0, np.sqrt(times) * sups / l1, 0.0) if l1 > 0 else np.zeros(n_t)
        res["disp"].append(float(np.max(r[times >= cfg.fit_window[0]])) if l1 > 0 else 0.0)
        exps.append(_fit_exponent(times, sups, cfg.fit_window))
        res["str"].append(rep.strichartz / l2 if l2 > 0 else 0.0)
        res["ls1"].append(rep.weighted_smoothing / l2 if l2 > 0 else 0.0)
        res["ls2"].append(rep.derivative_smoothing / h12 if h12 > 0 else 0.0)
        if "duhamel" in cfg.checks:
            for k, val in zip(("s31", "s32", "cstr", "str_inh"), _duhamel_ratios(f, cfg, grid, ham, times)):
                res[k].append(val)
    ensemble_sup = np.max(np.array(sup_curves), axis=0)
    checks = [
        InequalityCheck("dispersive", desc, np.array(res["disp"]),
                        _fit_exponent(times, ensemble_sup, cfg.fit_window), np.array(exps)),
        InequalityCheck("strichartz_L4Linf", desc, np.array(res["str"])),
        InequalityCheck("local_smoothing_weighted", desc, np.array(res["ls1"])),
        InequalityCheck("local_smoothing_derivative", desc, np.array(res["ls2"])),
    ]
    if "duhamel" in cfg.checks:
        fdesc = desc + f", forcing f(x) sin^2(pi t/{cfg.forcing_T}) on [0, {cfg.forcing_T}]"
        checks += [
            InequalityCheck("duhamel_weighted_smoothing", fdesc, np.array(res["s31"])),
            InequalityCheck("duhamel_derivative_smoothing", fdesc, np.array(res["s32"])),
            InequalityCheck("duhamel_strichartz_weighted_L2", fdesc, np.array(res["cstr"])),
            InequalityCheck("duhamel_strichartz_dual_L43L1", fdesc, np.array(res["str_inh"])),
        ]
    return checks


def duhamel_step(D_prev, F_prev, F_now, dt, ham: DeltaHamiltonian):
    """Trapezoid update of D(t) = int_0^t exp(-i(t-s)H) P_c F(s) ds over one step."""
    return ham.propagate_pc(D_prev + 0.5 * dt * F_prev, dt) + 0.5 * dt * ham.project_pc(F_now)


def _duhamel_ratios(f, cfg, grid, ham, times):
    prof = _forcing_profile(times, cfg.forcing_T)
    acc1 = XNormAccumulator(grid, cfg.dt, alpha=-1.0)
    D = np.zeros(grid.N, dtype=complex)
    sup_l2 = 0.0
    for m in range(times.size):
        if m:
            D = duhamel_step(D, prof[m - 1] * f, prof[m] * f, cfg.dt, ham)
        acc1.add(D)
        sup_l2 = max(sup_l2, grid.l2(D))
    rep = acc1.report()
    # time-separable forcing: mixed norms factor into a time norm times a space norm
    w = _time_weights(times.size, cfg.dt)
    pt2 = math.sqrt(float(np.sum(w * prof**2)))
    pt43 = float(np.sum(w * prof ** (4 / 3))) ** 0.75
    af = np.abs(f)
    rhs31 = pt2 * float(grid.integrate(japanese(grid.x, 1.0) * af))
    rhs32 = pt2 * float(grid.integrate(af))
    rhsc = pt2 * grid.l2(japanese(grid.x, 2.5) * af)
    rhs_inh = pt43 * float(grid.integrate(af))
    strich = rep.strichartz + sup_l2
    return (rep.weighted_smoothing / rhs31, rep.derivative_smoothing / rhs32, strich / rhsc, strich / rhs_inh)
