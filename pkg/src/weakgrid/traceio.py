"""Trace and metrics serialization.

Trace files are CSV with one row per controller tick, twelve significant
digits per value and a pipe-joined flags column, so a written trace re-reads
to the emitted precision and repeated deterministic runs produce byte
identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .scenario import FLAG_NAMES, Metrics, Scenario, Trace
from .config import scenario_to_dict

TRACE_HEADER = "t,v_pcc_d,v_pcc_q,i_l_d,i_l_q,p,q,pll_angle,flags"

_NAME_TO_FLAG = {name: bit for bit, name in FLAG_NAMES.items()}


def _flags_text(bits: int) -> str:
    if not bits:
        return ""
    return "|".join(name for bit, name in sorted(FLAG_NAMES.items()) if bits & bit)


def _flags_bits(text: str) -> int:
    bits = 0
    for name in filter(None, text.split("|")):
        try:
            bits |= _NAME_TO_FLAG[name]
        except KeyError:
            raise ValueError(f"unknown trace flag {name!r}")
    return bits


def write_trace_csv(trace: Trace, path) -> None:
    path = Path(path)
    fmt = "%.12g"
    lines = [TRACE_HEADER]
    for i in range(len(trace)):
        values = (
            trace.t[i],
            trace.v_d[i],
            trace.v_q[i],
            trace.i_d[i],
            trace.i_q[i],
            trace.p[i],
            trace.q[i],
            trace.pll_angle[i],
        )
        lines.append(",".join(fmt % v for v in values) + "," + _flags_text(int(trace.flags[i])))
    path.write_text("\n".join(lines) + "\n")


def read_trace_csv(path) -> Trace:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError(f"{path} is not a trace file (bad header)")
    n = len(lines) - 1
    cols = np.empty((n, 8))
    flags = np.zeros(n, dtype=np.uint8)
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != 9:
            raise ValueError(f"{path}:{i + 2}: expected 9 columns, got {len(parts)}")
        cols[i] = [float(x) for x in parts[:8]]
        flags[i] = _flags_bits(parts[8])
    t = cols[:, 0]
    if np.any(np.diff(t) <= 0):
        raise ValueError(f"{path}: time column is not strictly increasing")
    return Trace(
        t=t,
        v_d=cols[:, 1],
        v_q=cols[:, 2],
        i_d=cols[:, 3],
        i_q=cols[:, 4],
        p=cols[:, 5],
        q=cols[:, 6],
        pll_angle=cols[:, 7],
        flags=flags,
    )


def write_metrics_json(metrics: Metrics, scenario: Scenario, path, extra: dict | None = None) -> None:
    doc = {
        "metrics": metrics.as_dict(),
        "scenario": scenario_to_dict(scenario),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_plant_rate_csv(plant_log: np.ndarray, path) -> None:
    """Full plant-step dump (large files; behind a CLI flag)."""
    header = "t,i_f_a,i_f_b,i_f_c,v_pcc_a,v_pcc_b,v_pcc_c,i_line_a,i_line_b,i_line_c"
    with Path(path).open("w") as fh:
        fh.write(header + "\n")
        for row in plant_log:
            fh.write(",".join("%.12g" % v for v in row) + "\n")
