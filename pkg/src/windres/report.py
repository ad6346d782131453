"""Class-mean metric tables: base means plus percent changes per counterfactual."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Mapping, Optional, Sequence

from .events import METRIC_NAMES, SIZE_CLASSES

CLASS_NAMES = tuple(c.value for c in SIZE_CLASSES)


def _fmt(x: Optional[float], spec: str) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(x, spec)


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def table_columns(names: Sequence[str]) -> list[str]:
    cols = ["metric"] + [f"base_{c}" for c in CLASS_NAMES]
    for name in names:
        cols += [f"{name}_{c}_pct" for c in CLASS_NAMES]
    return cols


def table_rows(base: Mapping[str, Mapping[str, Optional[float]]],
               changes: Sequence[tuple[str, Mapping]]) -> list[list]:
    """One row per metric; ``base`` and each change table map class -> metric -> value."""
    rows = []
    for metric in METRIC_NAMES:
        row = [metric] + [base[c][metric] for c in CLASS_NAMES]
        for _, pct in changes:
            row += [pct[c][metric] for c in CLASS_NAMES]
        rows.append(row)
    return rows


def table_csv(base, changes, provenance: Optional[dict] = None) -> str:
    buf = io.StringIO()
    if provenance:
        buf.write("# " + json.dumps(provenance, sort_keys=True, separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table_columns([name for name, _ in changes]))
    n_base = len(CLASS_NAMES)
    for row in table_rows(base, changes):
        w.writerow([row[0]]
                   + [_fmt(x, ".6f") for x in row[1:1 + n_base]]
                   + [_fmt(x, ".3f") for x in row[1 + n_base:]])
    return buf.getvalue()


def area_report(station: str, base: dict, counts: dict, results: Sequence[tuple[str, dict]]) -> dict:
    """JSON-ready report for one area; ``results`` are counterfactual result dicts in column order."""
    return {
        "area": station,
        "event_counts": counts,
        "base": base,
        "counterfactuals": [
            {
                "name": name,
                "kind": res["kind"],
                "parameters": res["parameters"],
                "flags": res["flags"],
                "m": res.get("m", 0),
                "converged": res.get("converged", True),
                "percent_change": res["percent_change"],
                "ci_halfwidth_normalized": res.get("ci_halfwidth_normalized"),
            }
            for name, res in results
        ],
    }
