"""CSV and JSON output.

Trace CSV header: ``n,t,component_0,...,component_{2rD-1},kind``.  Floats
are written with ``repr`` so they read back bit for bit.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .engine import RunTrace
from .ode import OdeTrajectory


def _rows(states: np.ndarray, times: np.ndarray, kind: str, every: int, index=None):
    idx = range(0, len(states), every) if index is None else index
    for k in idx:
        yield [str(k), repr(float(times[k]))] + [repr(float(v)) for v in states[k]] + [kind]


def emit_trace_csv(trace, path, kind: Optional[str] = None, every: int = 1,
                   append_to: Optional[Sequence] = None) -> Path:
    """Write a RunTrace or OdeTrajectory; ``t = eps * n`` for runs.

    ``append_to`` lists further (trajectory, kind) pairs written into the
    same file, e.g. an ODE overlay.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    items = [(trace, kind)] + list(append_to or [])
    width = items[0][0].states.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "t"] + [f"component_{i}" for i in range(width)] + ["kind"])
        for tr, kd in items:
            if isinstance(tr, OdeTrajectory):
                times, kd = tr.times, kd or "ode"
            else:
                times, kd = tr.times, kd or tr.kind
            for row in _rows(tr.states, times, kd, every):
                w.writerow(row)
    return path


def read_trace_csv(path) -> dict:
    """Load a trace CSV into ``{kind: (n, t, states)}``."""
    out: dict = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            out.setdefault(row[-1], []).append(row[:-1])
    result = {}
    for kind, rows in out.items():
        n = np.array([int(r[0]) for r in rows])
        t = np.array([float(r[1]) for r in rows])
        s = np.array([[float(v) for v in r[2:]] for r in rows])
        result[kind] = (n, t, s)
    return result


def write_table_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])
    return path


def emit_attractor_csv(trace: RunTrace, path, every: int = 1) -> Path:
    n = trace.r * trace.dim
    header = (["n", "t"] + [f"pr_{i}" for i in range(n)] + [f"pg_{i}" for i in range(n)])
    times = trace.times
    rows = ([k, float(times[k])] + [float(v) for v in trace.pr[k]]
            + [float(v) for v in trace.pg[k]] for k in range(0, len(trace), every))
    return write_table_csv(path, header, rows)


def matrix_json(m) -> dict:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]),
            "data": [float(v) for v in m.ravel(order="C")]}


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")
    return path
