"""Command line front end.

    deltanls bound-state          profiles, residuals, mass curve and E1
    deltanls evolve               a single trajectory with conservation series
    deltanls stability-experiment the full decomposition/norm/scattering pipeline
    deltanls linear-checks        empirical ratios for the linear estimates
    deltanls sweep                independent runs (or a delta sweep) with a summary table

Exit codes: 0 success, 2 configuration error, 3 numerical-regime error,
4 failure after partial output (a FAILED marker is written next to it).
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import apply_override, deep_merge, load_config, output_dir, validate
from .solver import evolve
from .errors import (ConvergenceError, DeltaNLSError, DomainError, EvolutionAbort, IllConditioned, ParameterError,
                     QuadratureBudgetError, StructuralError, ThresholdOutsideRange)
from .io import SnapshotWriter, write_csv, write_json, write_snapshots

log = logging.getLogger("deltanls")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4
NUMERICAL = (ConvergenceError, DomainError, EvolutionAbort, IllConditioned, QuadratureBudgetError,
             ThresholdOutsideRange)
MARKER = "FAILED"


class PartialOutput(DeltaNLSError):
    """A pipeline stage failed after some outputs were written."""


def _profile_rows(grid, Q):
    return [(x, q.real, q.imag) for x, q in zip(grid.x, np.asarray(Q, dtype=complex))]


def _series_rows(traj):
    return [(t, m, e, a, ab) for t, m, e, a, ab in
            zip(traj.times, traj.mass, traj.energy, traj.origin_amplitude, traj.absorbed_mass)]


SERIES_HEADER = ["t", "mass", "energy", "abs_u_origin", "absorbed_mass"]


def cmd_bound_state(cfg, out: Path) -> int:
    rep = ex.bound_state_report(cfg)
    grid = ex.grid_from(cfg)
    for name, Q in rep["profiles"].items():
        write_csv(out / f"profile_{name}.csv", ["x", "re_Q", "im_Q"], _profile_rows(grid, Q), cfg)
    payload = {"residuals": rep["residuals"]}
    if "mass_curve" in rep:
        write_csv(out / "mass_curve.csv", ["E", "mass"], rep["mass_curve"].tolist(), cfg)
        payload["E1"] = rep["E1"]
    write_json(out / "bound_state.json", payload, cfg)
    return EXIT_OK


def cmd_evolve(cfg, out: Path) -> int:
    params, grid = ex.params_from(cfg), ex.grid_from(cfg)
    u0 = ex.initial_data(cfg, params, grid)
    econf = ex.evolution_from(cfg, store_snapshots=False)
    dg = cfg["diagnostics"]
    writer = None
    if dg["store_snapshots"]:
        writer = SnapshotWriter(out / "snapshots.bin", grid, params, econf.time.dt, econf.time.stride,
                                dg["snapshot_dtype"])
    try:
        traj = evolve(u0, econf, params, grid,
                      observer=(lambda m, t, u: writer.write(u)) if writer else None)
    finally:
        if writer is not None:
            writer.close()
    write_csv(out / "series.csv", SERIES_HEADER, _series_rows(traj), cfg)
    write_snapshots(out / "final.bin", grid, params, econf.time.dt, econf.time.stride, [traj.final])
    write_json(out / "evolve.json", {"scheme": traj.scheme, "mass_drift_rate": traj.mass_drift_rate,
                                     "energy_drift_rate": traj.energy_drift_rate,
                                     "energy_oscillation": traj.energy_oscillation,
                                     "absorbed_mass": traj.absorbed_mass[-1], "T": traj.times[-1]}, cfg)
    return EXIT_OK


def _norm_report(res) -> dict:
    d = res.diagnostics
    rep = {"summary": res.summary(), "Y": vars(d["Y"]), "ZW": {**vars(d["ZW"]), "Z_ratio": d["ZW"].Z_ratio},
           "z_asymptotic": d["z_asymptotic"], "bootstrap": d.get("bootstrap"),
           "grid": {"L": res.trajectory.grid.L, "N": res.trajectory.grid.N},
           "horizon": float(res.trajectory.times[-1])}
    if d["X"] is not None:
        rep["X"] = d["X"].as_dict()
        rep["X_pc"] = d["X_pc"].as_dict()
    sc = d["scattering"]
    if sc is not None:
        rep["scattering"] = {"spearman_late": sc.spearman_late, "checkpoints": len(sc.times)}
    return rep


def cmd_stability_experiment(cfg, out: Path) -> int:
    params, grid = ex.params_from(cfg), ex.grid_from(cfg)
    ev, dg = cfg["evolution"], cfg["diagnostics"]
    writer = None
    if dg["store_snapshots"]:
        writer = SnapshotWriter(out / "snapshots.bin", grid, params, ev["dt_time"], ev["stride_steps"],
                                dg["snapshot_dtype"])
    try:
        res = ex.run_stability(cfg, writer)
    finally:
        if writer is not None:
            writer.close()
    d = res.diagnostics
    mt = d["modulation"]
    write_csv(out / "modulation.csv", ["t", "re_z", "im_z", "E", "re_zeta", "im_zeta", "ode_residual"], mt.rows(), cfg)
    write_csv(out / "series.csv", SERIES_HEADER, _series_rows(res.trajectory), cfg)
    sc = d["scattering"]
    if sc is not None:
        write_csv(out / "scattering.csv", ["t", "cauchy_tail_h1", "phi0_component_h1"],
                  list(zip(sc.times, sc.cauchy_tail, sc.phi0_component)), cfg)
        write_snapshots(out / "v_plus.bin", grid, params, ev["dt_time"], ev["stride_steps"], [sc.v_plus])
    write_json(out / "norms.json", _norm_report(res), cfg)
    write_json(out / "verdict.json", res.verdict(), cfg)
    if res.error:
        raise PartialOutput(res.error)
    return EXIT_OK


def cmd_linear_checks(cfg, out: Path) -> int:
    checks = ex.linear_checks(cfg)
    write_json(out / "linear_checks.json", {"checks": [c.as_dict() for c in checks]}, cfg)
    return EXIT_OK


COMMANDS = {"bound-state": cmd_bound_state, "evolve": cmd_evolve,
            "stability-experiment": cmd_stability_experiment, "linear-checks": cmd_linear_checks}


def _sweep_configs(cfg):
    sw = cfg["sweep"]
    base = copy.deepcopy(cfg)
    runs = []
    for d in sw.get("deltas") or []:
        c = copy.deepcopy(base)
        c["initial"]["delta"] = float(d)
        runs.append((f"delta_{d:g}", c))
    for i, item in enumerate(sw.get("runs") or []):
        c = copy.deepcopy(base)
        if isinstance(item, dict):
            c = deep_merge(c, item)
        else:
            for ov in item:
                apply_override(c, ov)
        runs.append((f"run_{i:03d}", c))
    if not runs:
        raise ParameterError("sweep needs sweep.deltas or sweep.runs")
    for _, c in runs:
        validate(c)
    return runs


def _run_one(command, name, cfg, out):
    """Worker body: one isolated run; returns (name, exit code, message, summary)."""
    path = Path(out) / name
    code, msg = _dispatch(command, cfg, path)
    summary = {}
    if command == "stability-experiment" and (path / "norms.json").exists():
        with open(path / "norms.json") as fh:
            doc = json.load(fh)
        summary = {**doc["summary"], **(doc.get("bootstrap") or {})}
    return name, code, msg, summary


def cmd_sweep(cfg, out: Path) -> int:
    command = cfg["sweep"]["command"]
    if command not in COMMANDS or command == "sweep":
        raise ParameterError(f"sweep.command must be one of {sorted(set(COMMANDS) - {'sweep'})}")
    runs = _sweep_configs(cfg)
    workers = max(1, int(cfg["sweep"].get("workers", 1)))
    if workers == 1:
        results = [_run_one(command, n, c, out) for n, c in runs]
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_one, command, n, c, str(out)) for n, c in runs]
            results = [f.result() for f in futs]
    rows = [(n, code, msg) for n, code, msg, _ in results]
    write_csv(out / "sweep_summary.csv", ["run", "exit_code", "message"], rows, cfg)
    payload = {"runs": [{"run": n, "exit_code": code, "message": msg, "summary": s} for n, code, msg, s in results]}
    summaries = [s for _, code, _, s in results if s]
    if command == "stability-experiment" and cfg["sweep"].get("deltas") and len(summaries) >= 2:
        payload["orders"] = ex.sweep_orders(summaries)
    write_json(out / "sweep.json", payload, cfg)
    failed = [r for r in rows if r[1] != EXIT_OK]
    if failed:
        _marker(out, f"{len(failed)} of {len(rows)} runs failed: " + ", ".join(r[0] for r in failed))
        return EXIT_PARTIAL
    return EXIT_OK


COMMANDS["sweep"] = cmd_sweep


def _marker(out: Path, message: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / MARKER).write_text(message.rstrip() + "\n")


def _has_outputs(out: Path) -> bool:
    return out.exists() and any(p.name != MARKER for p in out.iterdir())


def _dispatch(command, cfg, out: Path):
    """Run one command, mapping library errors to exit codes; never raises."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[command](cfg, out), ""
    except PartialOutput as exc:
        _marker(out, str(exc))
        return EXIT_PARTIAL, str(exc)
    except (ParameterError, StructuralError) as exc:
        code = EXIT_PARTIAL if _has_outputs(out) else EXIT_CONFIG
        if code == EXIT_PARTIAL:
            _marker(out, str(exc))
        return code, str(exc)
    except NUMERICAL as exc:
        _marker(out, f"{type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL, str(exc)
    except (DeltaNLSError, OSError) as exc:
        _marker(out, f"{type(exc).__name__}: {exc}")
        return EXIT_PARTIAL, str(exc)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deltanls", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("bound-state", "evolve", "stability-experiment", "linear-checks", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH", help="JSON run configuration")
        sp.add_argument("--out", metavar="DIR", help="output directory (default $DELTANLS_OUTPUT_ROOT/<output_dir>)")
        sp.add_argument("--seed", type=int, help="seed of the perturbation (initial.seed)")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dot-path override, e.g. initial.delta=0.02 (repeatable)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.override, args.seed)
    except ParameterError as exc:
        print(f"deltanls: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = output_dir(cfg, args.out)
    code, msg = _dispatch(args.command, cfg, out)
    if code != EXIT_OK:
        print(f"deltanls {args.command}: {msg}", file=sys.stderr)
    else:
        log.info("outputs written to %s", out)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
