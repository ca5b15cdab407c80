"""Deterministic CSV/JSON writers and the binary snapshot container.

Container layout (little endian):
    magic         8 bytes  b"DNLSSNAP"
    schema        uint32
    dtype flag    uint32   0 = complex128, 1 = complex64
    L             float64
    N             uint64
    q             float64
    p             int64
    mu            float64
    dt            float64
    stride        uint64
    count         uint64
then count * N complex samples, row-major (one snapshot per row).
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION
from .errors import StructuralError

MAGIC = b"DNLSSNAP"
_HEADER = struct.Struct("<8sIIdQdqddQQ")
_DTYPES = {0: np.complex128, 1: np.complex64}
_FLAGS = {"complex128": 0, "complex64": 1}
SIG_DIGITS = 12


def round_sig(x, digits=SIG_DIGITS):
    if x == 0 or not math.isfinite(x):
        return x
    return float(f"{x:.{digits}g}")


def to_jsonable(obj):
    """Recursively convert numpy/complex values and round floats to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [to_jsonable(float(obj.real)), to_jsonable(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return round_sig(v)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, payload: dict, config: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION, "config": config, **payload}
    with open(path, "w") as fh:
        json.dump(to_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_csv(path, header, rows, config: dict) -> Path:
    """CSV with two comment lines carrying the schema version and the resolved config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
        fh.write("# config: " + json.dumps(to_jsonable(config), sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.{SIG_DIGITS}g}"
    return str(v)


def read_csv(path):
    """(header, rows as float arrays) skipping comment lines."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    r = list(csv.reader(lines))
    return r[0], np.array([[float(x) for x in row] for row in r[1:]])


class SnapshotWriter:
    """Streams snapshots into the container and patches the count on close."""

    def __init__(self, path, grid, params, dt, stride, dtype="complex128"):
        if dtype not in _FLAGS:
            raise StructuralError(f"unsupported snapshot dtype {dtype!r}")
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.grid, self.flag = grid, _FLAGS[dtype]
        self.dtype = _DTYPES[self.flag]
        self.count = 0
        self._fh = open(self.path, "wb")
        self._meta = (MAGIC, SCHEMA_VERSION, self.flag, grid.L, grid.N, params.q, params.p, params.mu,
                      float(dt), int(stride))
        self._fh.write(_HEADER.pack(*self._meta, 0))

    def write(self, u):
        a = np.ascontiguousarray(np.asarray(u, dtype=self.dtype))
        if a.shape != (self.grid.N,):
            raise StructuralError(f"snapshot shape {a.shape} does not match N={self.grid.N}")
        self._fh.write(a.tobytes())
        self.count += 1

    def close(self):
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(_HEADER.pack(*self._meta, self.count))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_snapshots(path, grid, params, dt, stride, snapshots, dtype="complex128") -> Path:
    with SnapshotWriter(path, grid, params, dt, stride, dtype) as w:
        for u in snapshots:
            w.write(u)
    return Path(path)


def read_snapshots(path):
    """(header dict, array of shape (count, N))."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise StructuralError(f"{path}: truncated header")
        magic, schema, flag, L, N, q, p, mu, dt, stride, count = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise StructuralError(f"{path}: not a snapshot container")
        if flag not in _DTYPES:
            raise StructuralError(f"{path}: unknown dtype flag {flag}")
        raw = fh.read()
    item = np.dtype(_DTYPES[flag]).itemsize
    if len(raw) != count * N * item:
        raise StructuralError(f"{path}: expected {count * N * item} payload bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype=_DTYPES[flag])
    header = {"schema_version": schema, "dtype": "complex128" if flag == 0 else "complex64", "L": L, "N": N,
              "q": q, "p": p, "mu": mu, "dt": dt, "stride": stride, "count": count}
    return header, data.reshape(count, N)
