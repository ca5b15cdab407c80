import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deltanls import ModelParams, SpatialGrid
from deltanls.config import DEFAULTS, SCHEMA_VERSION, apply_override, load_config, output_dir, parse_value, validate
from deltanls.errors import ParameterError, StructuralError
from deltanls.io import (SnapshotWriter, read_csv, read_snapshots, round_sig, to_jsonable, write_csv, write_json,
                         write_snapshots)


def test_defaults_validate():
    cfg = load_config()
    assert cfg == DEFAULTS
    assert cfg is not DEFAULTS


def test_overrides_and_seed(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"initial": {"delta": 0.02}, "grid": {"points_N": 1024}}))
    cfg = load_config(path, ["evolution.dt_time=1e-3", "initial.shape=gaussian", "output_dir=x"], seed=7)
    assert cfg["initial"]["delta"] == 0.02
    assert cfg["grid"] == {"half_width_L": 40.0, "points_N": 1024}
    assert cfg["evolution"]["dt_time"] == 1e-3
    assert cfg["initial"]["seed"] == 7
    assert cfg["output_dir"] == "x"
    assert parse_value("[1, 2]") == [1, 2] and parse_value("abc") == "abc"
    new = apply_override({}, "a.b.c=true")
    assert new == {"a": {"b": {"c": True}}}


@pytest.mark.parametrize("override", [
    "schema_version=2", "grid.points_N=0", "grid.points_N=10.5", "evolution.dt_time=-1", "params.q=\"a\"",
    "initial.kind=random", "initial.delta=-0.1", "initial.delta=0.5", "initial.z0=0.05", "initial.shape=box",
    "diagnostics.snapshot_dtype=float32", "initial.kind=file", "grid.half_width_L=true",
])
def test_invalid_configs(override):
    with pytest.raises(ParameterError):
        load_config(overrides=[override])


def test_bad_files(tmp_path):
    with pytest.raises(ParameterError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParameterError):
        load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1]")
    with pytest.raises(ParameterError):
        load_config(arr)
    with pytest.raises(ParameterError):
        apply_override({}, "novalue")
    with pytest.raises(ParameterError):
        apply_override({}, "=3")
    with pytest.raises(ParameterError):
        validate({"schema_version": 1})


def test_output_dir(monkeypatch, tmp_path):
    cfg = load_config(overrides=["output_dir=abc"])
    assert output_dir(cfg, tmp_path / "o") == tmp_path / "o"
    monkeypatch.setenv("DELTANLS_OUTPUT_ROOT", str(tmp_path))
    assert output_dir(cfg) == tmp_path / "abc"


@given(st.floats(allow_nan=False, allow_infinity=False, min_value=-1e300, max_value=1e300))
def test_round_sig_idempotent(x):
    r = round_sig(x)
    assert round_sig(r) == r
    if x != 0:
        assert abs(r - x) <= 1e-11 * abs(x)


def test_to_jsonable():
    doc = to_jsonable({"a": np.float64(1 / 3), "b": np.arange(3), "c": 1 + 2j, "d": float("nan"),
                       "e": -float("inf"), "f": np.bool_(True), 3: (1, 2)})
    assert doc == {"a": 0.333333333333, "b": [0, 1, 2], "c": [1.0, 2.0], "d": "nan", "e": "-inf", "f": True,
                   "3": [1, 2]}
    json.dumps(doc)


def test_json_and_csv_are_deterministic(tmp_path):
    cfg = load_config()
    payload = {"x": np.linspace(0, 1, 7), "y": {"b": 1e-17 / 3, "a": 2.0}}
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_json(a, payload, cfg)
    write_json(b, payload, cfg)
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["schema_version"] == SCHEMA_VERSION and doc["config"] == json.loads(json.dumps(cfg))
    rows = [(0.1, 2, True), (1 / 3, -1, False)]
    write_csv(tmp_path / "a.csv", ["u", "v", "w"], rows, cfg)
    write_csv(tmp_path / "b.csv", ["u", "v", "w"], rows, cfg)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    text = (tmp_path / "a.csv").read_text().splitlines()
    assert text[0] == f"# schema_version: {SCHEMA_VERSION}"
    assert text[2] == "u,v,w" and text[3] == "0.1,2,true"


def test_csv_round_trip(tmp_path):
    cfg = load_config()
    rows = [(0.5, 1.25), (1.0, -3e-9)]
    write_csv(tmp_path / "s.csv", ["t", "m"], rows, cfg)
    header, data = read_csv(tmp_path / "s.csv")
    assert header == ["t", "m"]
    assert np.array_equal(data, np.array(rows))


@pytest.mark.parametrize("dtype,tol", [("complex128", 0.0), ("complex64", 1e-7)])
def test_snapshot_round_trip(tmp_path, dtype, tol):
    g = SpatialGrid(5.0, 32)
    p = ModelParams(q=-0.7, p=6, mu=-2.0)
    rng = np.random.default_rng(0)
    snaps = rng.normal(size=(4, g.N)) + 1j * rng.normal(size=(4, g.N))
    write_snapshots(tmp_path / "s.bin", g, p, 1e-3, 10, snaps, dtype)
    header, data = read_snapshots(tmp_path / "s.bin")
    assert header == {"schema_version": SCHEMA_VERSION, "dtype": dtype, "L": 5.0, "N": 32, "q": -0.7, "p": 6,
                      "mu": -2.0, "dt": 1e-3, "stride": 10, "count": 4}
    assert np.max(np.abs(data - snaps)) <= tol * np.max(np.abs(snaps))


def test_snapshot_streaming_and_errors(tmp_path):
    g = SpatialGrid(5.0, 32)
    p = ModelParams()
    with SnapshotWriter(tmp_path / "s.bin", g, p, 0.1, 1) as w:
        w.write(np.ones(g.N))
        with pytest.raises(StructuralError):
            w.write(np.ones(g.N + 1))
    assert read_snapshots(tmp_path / "s.bin")[1].shape == (1, g.N)
    with pytest.raises(StructuralError):
        SnapshotWriter(tmp_path / "t.bin", g, p, 0.1, 1, dtype="float32")
    raw = (tmp_path / "s.bin").read_bytes()
    (tmp_path / "trunc.bin").write_bytes(raw[:-8])
    with pytest.raises(StructuralError):
        read_snapshots(tmp_path / "trunc.bin")
    (tmp_path / "short.bin").write_bytes(raw[:10])
    with pytest.raises(StructuralError):
        read_snapshots(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"X" * 8 + raw[8:])
    with pytest.raises(StructuralError):
        read_snapshots(tmp_path / "magic.bin")
