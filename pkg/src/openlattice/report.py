"""Deterministic result files.

Every file name carries the experiment kind and the configuration digest.
Floats are written with :func:`repr`, so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class ExperimentResult:
    """Tables, plot series, a summary and named pass/fail checks.

    ``tables`` maps a name to ``(header, rows)`` or to ready CSV text;
    ``plots`` maps a name to ``(x, y, yerr)`` arrays.  ``extra`` holds
    in-memory objects for programmatic callers and is never written.
    """

    kind: str
    tables: dict
    plots: dict
    summary: dict
    checks: dict
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.checks.values())


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def plot_data(x, y, yerr) -> str:
    """Plain whitespace-separated ``x y yerr`` columns with a comment header."""
    lines = ["# x y yerr"]
    for a, b, c in zip(np.asarray(x, float), np.asarray(y, float), np.asarray(yerr, float)):
        lines.append(f"{a!r} {b!r} {c!r}")
    return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def emit_report(result: ExperimentResult, out_dir, digest: str) -> list[Path]:
    """Write the result files and return their paths in writing order.

    Layout: ``<kind>-<digest>-<table>.csv``, ``<kind>-<digest>-<plot>.dat``
    and ``<kind>-<digest>-summary.jsonl`` (one JSON object per check and a
    final summary record).  The directory is created if missing.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{result.kind}-{digest}"
    paths = []

    def write(name: str, text: str):
        p = out / f"{stem}-{name}"
        with p.open("w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths.append(p)

    for name in sorted(result.tables):
        t = result.tables[name]
        write(f"{name}.csv", t if isinstance(t, str) else table_csv(*t))
    for name in sorted(result.plots):
        write(f"{name}.dat", plot_data(*result.plots[name]))
    lines = [json.dumps({"check": k, "passed": bool(v)}, sort_keys=True) for k, v in sorted(result.checks.items())]
    lines.append(json.dumps({"kind": result.kind, "passed": result.passed, "summary": _jsonable(result.summary)},
                            sort_keys=True))
    write("summary.jsonl", "\n".join(lines) + "\n")
    return paths
