"""Run configuration: a JSON document with unit-explicit keys, defaults, and dot-path overrides."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .errors import ParameterError

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "DELTANLS_OUTPUT_ROOT"

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "params": {"q": -1.0, "p": 4, "mu": -1.0},
    "grid": {"half_width_L": 40.0, "points_N": 4096},
    "evolution": {
        "dt_time": 5e-3,
        "horizon_T_time": 200.0,
        "stride_steps": 10,
        "scheme": "strang",
        "absorber": {"width_fraction": 0.1, "strength_per_time": 2.0},
        "mass_drift_tol_per_time": 1e-8,
        "energy_drift_tol_per_time": 1e-6,
    },
    "initial": {
        "kind": "perturbed_soliton",
        "z0": [0.05, 0.0],
        "delta": 0.05,
        "shape": "gaussian",
        "seed": 1,
        "path": None,
    },
    "diagnostics": {
        "track": True,
        "norms": True,
        "scattering": True,
        "checkpoint_every_outputs": 20,
        "delta_max": 0.2,
        "newton_tol": 1e-10,
        "store_snapshots": False,
        "snapshot_dtype": "complex128",
    },
    "bound_state": {
        "E_energy": -1.0,
        "z": None,
        "mass_curve_E_energy": [-0.55, -0.6, -0.75, -1.0, -1.5, -2.0, -3.0, -5.0],
    },
    "linear_checks": {
        "half_width_L": 200.0,
        "points_N": 4096,
        "horizon_T_time": 50.0,
        "dt_time": 0.05,
        "samples": 20,
        "seed": 0,
        "checks": ["dispersive", "strichartz", "smoothing", "duhamel"],
    },
    "sweep": {"command": "stability-experiment", "deltas": [], "runs": [], "workers": 1},
    "output_dir": "run",
}


def deep_merge(base: dict, upd: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_value(text: str):
    """JSON literal if it parses, else the raw string."""
    try:
        return json.loads(text)
    except (json.JSONDecodeError, TypeError):
        return text


def apply_override(cfg: dict, item: str) -> dict:
    """Set a dot-path key from 'a.b.c=value'."""
    if "=" not in item:
        raise ParameterError(f"override {item!r} must have the form key.path=value")
    path, raw = item.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ParameterError(f"empty override key in {item!r}")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = parse_value(raw.strip())
    return cfg


def load_config(path=None, overrides=(), seed=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError as exc:
            raise ParameterError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ParameterError("config root must be a JSON object")
        cfg = deep_merge(cfg, user)
    for item in overrides or ():
        apply_override(cfg, item)
    if seed is not None:
        cfg["initial"]["seed"] = int(seed)
    validate(cfg)
    return cfg


def _num(cfg, section, key, positive=False, integer=False):
    try:
        v = cfg[section][key]
    except (KeyError, TypeError) as exc:
        raise ParameterError(f"missing config key {section}.{key}") from exc
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParameterError(f"{section}.{key} must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ParameterError(f"{section}.{key} must be an integer, got {v!r}")
    if positive and not v > 0:
        raise ParameterError(f"{section}.{key} must be positive, got {v!r}")
    return v


def validate(cfg: dict) -> None:
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ParameterError(f"unsupported schema_version {cfg.get('schema_version')!r}")
    _num(cfg, "params", "q")
    _num(cfg, "params", "p", integer=True)
    _num(cfg, "params", "mu")
    _num(cfg, "grid", "half_width_L", positive=True)
    _num(cfg, "grid", "points_N", positive=True, integer=True)
    _num(cfg, "evolution", "dt_time", positive=True)
    _num(cfg, "evolution", "horizon_T_time", positive=True)
    _num(cfg, "evolution", "stride_steps", positive=True, integer=True)
    init = cfg["initial"]
    if init.get("kind") not in ("soliton", "perturbed_soliton", "file"):
        raise ParameterError(f"initial.kind must be soliton, perturbed_soliton or file, got {init.get('kind')!r}")
    if init["kind"] == "file" and not init.get("path"):
        raise ParameterError("initial.path is required for kind 'file'")
    _num(cfg, "initial", "delta")
    if init["delta"] < 0:
        raise ParameterError("initial.delta must be nonnegative")
    if init["delta"] >= cfg["diagnostics"]["delta_max"]:
        raise ParameterError(f"initial.delta = {init['delta']} must be below diagnostics.delta_max")
    z0 = init.get("z0")
    if not (isinstance(z0, (list, tuple)) and len(z0) == 2):
        raise ParameterError("initial.z0 must be a [real, imag] pair")
    if init.get("shape") not in ("gaussian",):
        raise ParameterError(f"unknown perturbation shape {init.get('shape')!r}")
    if cfg["diagnostics"].get("snapshot_dtype") not in ("complex128", "complex64"):
        raise ParameterError("diagnostics.snapshot_dtype must be complex128 or complex64")


def output_dir(cfg: dict, out=None) -> Path:
    """--out wins; otherwise output_dir under the environment root (default cwd)."""
    if out is not None:
        return Path(out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
    return root / str(cfg.get("output_dir", "run"))
