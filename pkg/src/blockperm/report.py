"""Run reports: canonical JSON (plus CSV for table commands).

The JSON body is a pure function of (command, config, seed), so reruns are
byte-identical; wall time goes to stderr unless explicitly requested, and
NaN cells serialize as null.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class RunReport:
    command: str
    config: dict
    seed: int | None
    backend: str
    results: dict
    diagnostics: dict = field(default_factory=dict)
    wall_time_s: float | None = None
    csv: str | None = None


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else (None if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def report_json(report: RunReport, emit_timing: bool = False) -> str:
    body = {
        "command": report.command,
        "config": _plain(report.config),
        "seed": report.seed,
        "backend": report.backend,
        "results": _plain(report.results),
        "diagnostics": _plain(report.diagnostics),
    }
    if emit_timing:
        body["wall_time_s"] = report.wall_time_s
    return json.dumps(body, sort_keys=True, indent=2) + "\n"


def table_csv(col_label: str, col_values, rows: dict[str, tuple], row_order=None) -> str:
    """Rows-by-columns table; NaN cells are left empty."""
    names = list(row_order) if row_order else list(rows)
    lines = [",".join([col_label] + [f"{v:g}" for v in col_values])]
    for name in names:
        cells = []
        for v in rows[name]:
            cells.append("" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v)))
        lines.append(",".join([name] + cells))
    return "\n".join(lines) + "\n"


def write_report(report: RunReport, out: str | None, emit_timing: bool = False) -> str:
    """Write (or return for stdout) the JSON body; CSV lands next to it."""
    text = report_json(report, emit_timing)
    if out:
        out_path = Path(out)
        out_path.write_text(text)
        if report.csv is not None:
            out_path.with_suffix(".csv").write_text(report.csv)
    return text
