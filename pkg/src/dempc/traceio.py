"""CSV trace files: one header row, floats printed with 17 significant digits."""

from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path

import numpy as np

from .sim import TRACE_COLUMNS, SimTrace


class TraceFormatError(ValueError):
    pass


def write_csv(trace: SimTrace, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(trace.header())]
    for row in trace.matrix():
        lines.append(",".join("%.17g" % v for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _dims(header):
    def count(prefix):
        pat = re.compile(rf"^{prefix}_(\d+)$")
        idx = [int(m.group(1)) for h in header if (m := pat.match(h))]
        if sorted(idx) != list(range(1, len(idx) + 1)):
            raise TraceFormatError(f"columns {prefix}_* are not numbered 1..k")
        return len(idx)

    n, m, l = count("xi"), count("nu"), count("r")
    if count("psi") != l:
        raise TraceFormatError("psi and r columns differ in number")
    expected = ["t"] + [f"xi_{i + 1}" for i in range(n)] + [f"nu_{i + 1}" for i in range(m)]
    expected += [f"r_{i + 1}" for i in range(l)] + [f"psi_{i + 1}" for i in range(l)] + list(TRACE_COLUMNS)
    if header != expected:
        raise TraceFormatError("header does not match the trace schema")
    return n, m, l


def read_csv(path) -> SimTrace:
    path = Path(path)
    if not path.exists():
        raise TraceFormatError(f"{path}: no such file")
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise TraceFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    n, m, l = _dims(header)
    body = [r for r in rows[1:] if r]
    if not body:
        raise TraceFormatError(f"{path}: trace has no rows")
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise TraceFormatError(f"{path}: {exc}") from exc
    if data.shape[1] != len(header):
        raise TraceFormatError(f"{path}: ragged rows")
    return SimTrace.from_matrix(data, n, m, l)


def format_metrics(metrics: dict) -> str:
    out = []
    for k, v in metrics.items():
        if v is None:
            s = "none"
        elif isinstance(v, bool):
            s = str(v).lower()
        elif isinstance(v, float):
            s = "%.17g" % v if math.isfinite(v) else str(v)
        else:
            s = str(v)
        out.append(f"{k}: {s}")
    return "\n".join(out)


def write_metrics(metrics: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(metrics, indent=2, allow_nan=True) + "\n")
    return path
