"""File formats: trajectory/spectrum/library/coefficient CSVs and fixed-precision JSON."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .errors import IngestionError

FLOAT_FMT = ".17g"


def fmt(x: float) -> str:
    return format(float(x), FLOAT_FMT)


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "null"
        if math.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        return fmt(x)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, set, frozenset)):
        seq = sorted(obj) if isinstance(obj, (set, frozenset)) else list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON: insertion-ordered keys, floats at 17 significant digits, inf as a string."""
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8", newline="\n")
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_table(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    header = ["t"] + traj.column_names()
    data = np.column_stack([traj.t, traj.states])
    return write_table(path, header, (list(map(float, row)) for row in data))


def _snap_dt(dt: float) -> float:
    short = float(f"{dt:.12g}")
    return short if abs(short - dt) <= 1e-12 * abs(dt) else dt


def read_trajectory_csv(path, rel_tol: float = 1e-9) -> Trajectory:
    """Load a trajectory CSV, checking header, finiteness and uniform sampling.

    Row numbers in error messages count data rows from 1 (the header is row 0).
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    ncol = len(header) - 1
    if ncol < 2 or ncol % 2 or header[0] != "t":
        raise IngestionError(f"{path}: header must be t,delta_1..delta_r,omega_1..omega_r; got {header}")
    r = ncol // 2
    expected = ["t"] + [f"delta_{i + 1}" for i in range(r)] + [f"omega_{i + 1}" for i in range(r)]
    if header != expected:
        raise IngestionError(f"{path}: header must be {','.join(expected)}; got {','.join(header)}")
    data = np.empty((len(rows) - 1, ncol + 1))
    for n, row in enumerate(rows[1:], start=1):
        if len(row) != ncol + 1:
            raise IngestionError(f"{path}: row {n} has {len(row)} fields, expected {ncol + 1}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise IngestionError(f"{path}: row {n}, column {header[c]}: not a number ({cell!r})") from None
            if not math.isfinite(v):
                raise IngestionError(f"{path}: row {n}, column {header[c]}: non-finite value {cell!r}")
            data[n - 1, c] = v
    if data.shape[0] < 2:
        raise IngestionError(f"{path}: need at least 2 data rows")
    t = data[:, 0]
    m = t.size
    dt = (t[-1] - t[0]) / (m - 1)
    if not dt > 0:
        raise IngestionError(f"{path}: timestamps must increase")
    steps = np.diff(t)
    bad = np.flatnonzero(np.abs(steps - dt) > rel_tol * dt)
    if bad.size:
        n = bad[0] + 2
        raise IngestionError(f"{path}: nonuniform timestamps at row {n} (step {steps[bad[0]]!r}, expected {dt!r})")
    return Trajectory(_snap_dt(dt), float(t[0]), data[:, 1:])
