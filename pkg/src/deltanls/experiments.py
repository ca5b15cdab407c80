"""Canned experiments built from a resolved run configuration.

Every function here takes the JSON-style config dict of ``config.py`` and
returns plain results; file output is left to ``cli.py``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .boundstates import (ClosedFormProfile, closed_form_Q, discrete_bound_state, elliptic_residual, find_E1,
                          jump_defect, mass_curve, solve_small_z)
from .diagnostics import LinearCheckConfig, RunDiagnostics, bootstrap_constants, check_linear_estimates
from .errors import ParameterError, StructuralError, ThresholdOutsideRange
from .grid import SpatialGrid, TimeGrid
from .hamiltonian import ModelParams, hamiltonian_for
from .io import read_snapshots
from .modulation import family_for
from .solver import Absorber, EvolutionConfig, Trajectory, evolve


# ----------------------------------------------------------------------
# config -> library objects


def params_from(cfg) -> ModelParams:
    p = cfg["params"]
    return ModelParams(q=float(p["q"]), p=int(p["p"]), mu=float(p["mu"]))


def grid_from(cfg) -> SpatialGrid:
    return SpatialGrid(float(cfg["grid"]["half_width_L"]), int(cfg["grid"]["points_N"]))


def evolution_from(cfg, store_snapshots=None) -> EvolutionConfig:
    ev = cfg["evolution"]
    ab = ev.get("absorber")
    absorber = None
    if ab and ab.get("strength_per_time", 0) > 0:
        absorber = Absorber(float(ab["width_fraction"]), float(ab["strength_per_time"]))
    store = cfg["diagnostics"]["store_snapshots"] if store_snapshots is None else store_snapshots
    return EvolutionConfig(TimeGrid(float(ev["dt_time"]), float(ev["horizon_T_time"]), int(ev["stride_steps"])),
                           scheme=ev["scheme"], absorber=absorber,
                           mass_drift_tol=float(ev["mass_drift_tol_per_time"]),
                           energy_drift_tol=float(ev["energy_drift_tol_per_time"]),
                           store_snapshots=bool(store))


def linear_checks_from(cfg) -> LinearCheckConfig:
    lc = cfg["linear_checks"]
    return LinearCheckConfig(q=float(cfg["params"]["q"]), L=float(lc["half_width_L"]), N=int(lc["points_N"]),
                             T=float(lc["horizon_T_time"]), dt=float(lc["dt_time"]), n_samples=int(lc["samples"]),
                             seed=int(lc["seed"]), fit_window=(1.0, float(lc["horizon_T_time"])),
                             checks=tuple(lc["checks"]))


# ----------------------------------------------------------------------
# initial data


def perturbation(grid: SpatialGrid, seed: int, shape: str = "gaussian") -> np.ndarray:
    """Even Gaussian exp(-x^2/(2 s^2) + i theta), s ~ U(0.5, 1.5), theta ~ U(0, 2 pi), unit H^1 norm."""
    if shape != "gaussian":
        raise ParameterError(f"unknown perturbation shape {shape!r}")
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.5, 1.5)
    theta = rng.uniform(0.0, 2 * np.pi)
    g = np.exp(-0.5 * (grid.x / s) ** 2 + 1j * theta)
    return g / grid.sobolev(g, 1.0)


def initial_data(cfg, params: ModelParams, grid: SpatialGrid, family=None) -> np.ndarray:
    init = cfg["initial"]
    if init["kind"] == "file":
        header, snaps = read_snapshots(init["path"])
        if header["N"] != grid.N or abs(header["L"] - grid.L) > 1e-12 * grid.L:
            raise StructuralError(f"{init['path']}: grid (L={header['L']}, N={header['N']}) does not match config")
        if header["count"] == 0:
            raise StructuralError(f"{init['path']}: container holds no snapshots")
        return np.asarray(snaps[-1], dtype=complex)
    fam = family or family_for(params, grid)
    z0 = complex(*init["z0"])
    u0 = fam.Q(z0) if z0 != 0 else np.zeros(grid.N, dtype=complex)
    if init["kind"] == "perturbed_soliton" and init["delta"] > 0:
        u0 = u0 + float(init["delta"]) * perturbation(grid, int(init["seed"]), init["shape"])
    return u0


# ----------------------------------------------------------------------
# bound states


def bound_state_report(cfg) -> dict:
    """Profiles, residuals, mass curve and threshold for the configured parameters."""
    params, grid = params_from(cfg), grid_from(cfg)
    bs = cfg["bound_state"]
    ham = hamiltonian_for(grid, params.q)
    out = {"profiles": {}, "residuals": {}}
    if bs.get("z") is not None:
        z = complex(*bs["z"]) if isinstance(bs["z"], (list, tuple)) else complex(bs["z"])
        st = solve_small_z(z, params, grid, ham=ham)
        out["profiles"]["small_z"] = st.Q
        out["residuals"]["small_z"] = {"z": z, "E": st.E, "elliptic_residual": elliptic_residual(st.Q, st.E, params, ham),
                                       "iterations": st.steps, "Q_origin": st.Q[grid.origin]}
    E = float(bs["E_energy"])
    prof = ClosedFormProfile(E, params)
    Q = closed_form_Q(E, params, grid).values
    out["profiles"]["closed_form"] = Q
    res = {"E": E, "branch": prof.branch, "normalizable": prof.normalizable, "Q_origin": prof.at_origin(),
           "elliptic_residual_spectral": elliptic_residual(Q, E, params, ham),
           "jump_defect": jump_defect(Q, params.q, grid)}
    if prof.normalizable:
        res["mass"] = prof.mass()
    if params.mu < 0:
        Qd = discrete_bound_state(E, params, grid, ham=ham).values
        out["profiles"]["discrete"] = Qd
        res["discrete_elliptic_residual"] = elliptic_residual(Qd, E, params, ham)
        res["discrete_minus_closed_form_sup"] = float(np.max(np.abs(Qd - Q)))
    out["residuals"]["closed_form"] = res
    if params.mu < 0:
        Es = [e for e in bs["mass_curve_E_energy"] if e < params.bound_energy]
        out["mass_curve"] = mass_curve(Es, params) if Es else np.empty((0, 2))
        try:
            E1, bracket = find_E1(params)
            out["E1"] = {"found": True, "E1": E1, "bracket": list(bracket)}
        except ThresholdOutsideRange as exc:
            out["E1"] = {"found": False, "message": str(exc)}
    return out


# ----------------------------------------------------------------------
# stability experiment


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    sense: str = "<="

    @property
    def margin(self) -> float:
        """Distance to the threshold, positive when the check passes."""
        if self.sense == "<=":
            return self.threshold - self.value
        if self.sense == ">=":
            return self.value - self.threshold
        return self.threshold - self.value

    def as_dict(self):
        return {"name": self.name, "value": self.value, "threshold": self.threshold, "sense": self.sense,
                "margin": self.margin, "passed": bool(self.passed)}


def _check(name, value, threshold, sense="<="):
    value = float(value)
    ok = value <= threshold if sense in ("<=", "<") else value >= threshold
    if sense == "<":
        ok = value < threshold
    return Check(name, value, float(threshold), bool(ok and math.isfinite(value)), sense)


@dataclass
class StabilityResult:
    delta: float
    trajectory: Trajectory
    diagnostics: dict
    checks: list = field(default_factory=list)
    error: str = ""

    @property
    def passed(self) -> bool:
        return not self.error and all(c.passed for c in self.checks)

    def verdict(self) -> dict:
        return {"passed": self.passed, "delta": self.delta, "error": self.error,
                "checks": [c.as_dict() for c in self.checks]}

    def summary(self) -> dict:
        d = self.diagnostics
        mt = d["modulation"]
        za = d["z_asymptotic"]
        sc = d["scattering"]
        out = {"delta": self.delta, "tracked_all": not mt.truncated, "v_h1_sup": d["v_h1_sup"],
               "z0": za.get("z0", complex("nan")), "z_plus": za["z_plus"], "abs_change": za.get("abs_change", math.nan),
               "zeta_tail": za["tail"], "zeta_converged": za["converged"], "Y": d["Y"].total, "Y_l1": d["Y"].l1,
               "Y_l2": d["Y"].l2, "ode_consistency": mt.consistency, "overlap_constant": mt.overlap_constant,
               "Z": d["ZW"].Z, "W": d["ZW"].W, "Z_ratio": d["ZW"].Z_ratio,
               "mass_drift_rate": self.trajectory.mass_drift_rate,
               "absorbed_mass": float(self.trajectory.absorbed_mass[-1])}
        if d["X"] is not None:
            out["X"] = d["X"].total
            out["X_pc"] = d["X_pc"].total
        if sc is not None:
            out["spearman_late"] = sc.spearman_late
            out["phi0_component_start"] = float(sc.phi0_component[0])
            out["phi0_component_end"] = float(sc.phi0_component[-1])
        return out


def stability_checks(delta: float, diag: dict, traj: Trajectory) -> list:
    """The property checks of a perturbed-soliton run, with margins."""
    mt = diag["modulation"]
    za = diag["z_asymptotic"]
    checks = [Check("tracked_every_snapshot", float(mt.truncated), 0.0, not mt.truncated, "==")]
    if traj.absorbed_mass[-1] == 0:
        checks.append(_check("energy_drift_per_time", traj.energy_drift_rate, 1e-6))
    checks.append(_check("mass_drift_per_time", traj.mass_drift_rate, 1e-8))
    if delta == 0:
        checks.append(_check("v_h1_sup", diag["v_h1_sup"], 1e-6))
        checks.append(_check("zeta_tail", za["tail"], 1e-6))
        return checks
    checks.append(_check("v_h1_sup_over_delta", diag["v_h1_sup"] / delta, 3.0))
    checks.append(_check("abs_z_change_over_delta_sq", za["abs_change"] / delta**2, 10.0))
    sc = diag["scattering"]
    rho = sc.spearman_late if sc is not None else math.nan
    checks.append(_check("cauchy_tail_spearman", rho, 0.0, "<"))
    if sc is not None and sc.phi0_component[-1] > 0:
        decay = sc.phi0_component[0] / sc.phi0_component[-1]
    else:
        decay = math.inf if sc is not None and sc.phi0_component[0] > 0 else math.nan
    checks.append(_check("phi0_component_decay_factor", decay, 2.0, ">="))
    checks.append(_check("ode_consistency", mt.consistency, 0.05))
    if delta <= 0.05 and diag["X"] is not None and diag["X_pc"].total > 0:
        checks.append(_check("X_over_X_pc", diag["X"].total / diag["X_pc"].total, 1.5))
    return checks


def run_stability(cfg, writer=None) -> StabilityResult:
    """evolve -> track -> norms -> z_plus -> scattering state, streamed through one observer.

    ``writer`` (optional) receives every output snapshot, e.g. a SnapshotWriter.
    """
    params, grid = params_from(cfg), grid_from(cfg)
    dg = cfg["diagnostics"]
    fam = family_for(params, grid)
    u0 = initial_data(cfg, params, grid, fam)
    econf = evolution_from(cfg, store_snapshots=False)
    dt_out = econf.time.dt * econf.time.stride
    rd = RunDiagnostics(params, grid, dt_out, int(dg["checkpoint_every_outputs"]), float(dg["newton_tol"]),
                        float(dg["delta_max"]))

    def observe(m, t, u):
        rd(m, t, u)
        if writer is not None:
            writer.write(u)

    traj = evolve(u0, econf, params, grid, observer=observe, ham=fam.ham)
    diag = rd.finish()
    delta = float(cfg["initial"]["delta"]) if cfg["initial"]["kind"] == "perturbed_soliton" else 0.0
    if diag["X"] is not None and diag["Y"] is not None:
        diag["bootstrap"] = bootstrap_constants(diag["X"].total, diag["Y"].total, diag["ZW"].Z, diag["ZW"].W,
                                                float(diag["modulation"].v_h1[0]) if diag["modulation"].v_h1.size
                                                else 0.0, params.p)
    res = StabilityResult(delta, traj, diag, stability_checks(delta, diag, traj))
    if diag["modulation"].truncated:
        res.error = f"tracking truncated: {diag['modulation'].message}"
    return res


def fit_order(x, y) -> float:
    """Least-squares slope of log y against log x over positive entries."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if np.count_nonzero(ok) < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def sweep_orders(summaries) -> dict:
    """Fitted orders in delta of Y and of ||z_plus| - |z(0)||, plus the max bootstrap constants."""
    d = [s["delta"] for s in summaries]
    out = {"deltas": d,
           "order_Y": fit_order(d, [s["Y"] for s in summaries]),
           "order_Y_l1": fit_order(d, [s["Y_l1"] for s in summaries]),
           "order_Y_l2": fit_order(d, [s["Y_l2"] for s in summaries]),
           "order_abs_change": fit_order(d, [s["abs_change"] for s in summaries])}
    cy = [s.get("C_Y") for s in summaries if s.get("C_Y") is not None]
    cx = [s.get("C_X") for s in summaries if s.get("C_X") is not None]
    if cy:
        out["max_C_Y"] = max(cy)
    if cx:
        out["max_C_X"] = max(cx)
    zr = [s["Z_ratio"] for s in summaries]
    out["max_Z_ratio"] = max(zr) if zr else math.nan
    return out


def linear_checks(cfg) -> list:
    return check_linear_estimates(linear_checks_from(cfg))
