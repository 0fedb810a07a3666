"""Flat-file reports. Output bytes depend only on the result."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .runner import ScenarioResult

ESTIMATE_COLUMNS = ["label", "mean_point", "truth", "bias", "emp_se", "mean_se", "coverage", "reject_rate", "n_reps"]
REFUSAL_COLUMNS = ["replication", "refusals", "offered", "rate"]
SWEEP_COLUMNS = ["parameter", "value"] + ESTIMATE_COLUMNS


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def _csv(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def render_estimates(result: ScenarioResult) -> str:
    return _csv(ESTIMATE_COLUMNS, [e.row() for e in result.estimates])


def render_refusal(result: ScenarioResult) -> str:
    return _csv(REFUSAL_COLUMNS, result.refusal)


def render_sweep(result: ScenarioResult) -> str:
    return _csv(SWEEP_COLUMNS, result.sweep)


def render_json(result: ScenarioResult) -> str:
    return json.dumps(result.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit_reports(result: ScenarioResult, directory: str | Path) -> list[Path]:
    """Write estimates.csv, refusal.csv, sweep.csv (with a sweep) and result.json.

    Returns the written paths. Filesystem errors propagate unchanged.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = {"estimates.csv": render_estimates(result), "refusal.csv": render_refusal(result)}
    if result.sweep_parameter is not None:
        files["sweep.csv"] = render_sweep(result)
    files["result.json"] = render_json(result)
    written = []
    for name, text in files.items():
        path = out / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)
    return written
