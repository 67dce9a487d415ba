"""JSON and CSV artifacts.

Every float is written with 17 significant digits (``%.17g``), which round-trips
IEEE-754 doubles exactly; NaN and infinities become ``null``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .simulate import TraceJumpLog

__all__ = ["dumps", "write_json", "read_json", "digest", "write_jumps", "read_jumps",
           "JUMP_COLUMNS"]

JUMP_COLUMNS = ("run", "entry_index", "valley", "holding_rescaled", "censored")


def _enc(o, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(o, (bool, np.bool_)):
        return "true" if o else "false"
    if o is None:
        return "null"
    if isinstance(o, (int, np.integer)):
        return str(int(o))
    if isinstance(o, (float, np.floating)):
        x = float(o)
        if not math.isfinite(x):
            return "null"
        s = format(x, ".17g")
        if "e" not in s and "." not in s and "n" not in s:
            s += ".0"
        return s
    if isinstance(o, str):
        return json.dumps(o)
    if isinstance(o, np.ndarray):
        return _enc(o.tolist(), indent, level)
    if isinstance(o, dict):
        if not o:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_enc(v, indent, level + 1)}" for k, v in o.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(o, (list, tuple)):
        if not o:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating, bool)) or v is None for v in o):
            return "[" + ", ".join(_enc(v, indent, level + 1) for v in o) + "]"
        items = [pad + _enc(v, indent, level + 1) for v in o]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj, indent: int = 2) -> str:
    return _enc(obj, indent, 0) + "\n"


def write_json(path, obj) -> str:
    """Write ``obj`` and return the sha256 of the bytes written."""
    text = dumps(obj)
    Path(path).write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def read_json(path):
    return json.loads(Path(path).read_text())


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_jumps(path, logs) -> None:
    """One row per visited valley: run, entry_index, valley, holding_rescaled, censored."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(JUMP_COLUMNS)
        for log in logs:
            for k, (v, hold, cz) in enumerate(zip(log.valleys, log.holdings, log.censored)):
                w.writerow([int(log.run), k, int(v), format(float(hold), ".17g"), int(bool(cz))])


def read_jumps(path, meta: dict | None = None) -> list:
    """Rebuild ``TraceJumpLog`` objects from a jumps CSV and optional metadata.

    Per-run Delta times, totals and first transitions come from
    ``meta["runs"]`` when present.
    """
    rows: dict = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        missing = set(JUMP_COLUMNS[:4]) - set(r.fieldnames or ())
        if missing:
            raise ValueError(f"jumps CSV lacks columns {sorted(missing)}")
        for row in r:
            run = int(row["run"])
            rows.setdefault(run, []).append(
                (int(row["entry_index"]), int(row["valley"]), float(row["holding_rescaled"]),
                 bool(int(row.get("censored", "0") or 0))))
    runs_meta = {int(m["run"]): m for m in (meta or {}).get("runs", [])}
    theta = float((meta or {}).get("theta", 1.0) or 1.0)
    dt = (meta or {}).get("dt")
    logs = []
    for run in sorted(rows):
        ent = sorted(rows[run])
        m = runs_meta.get(run, {})
        first = m.get("first_transition")
        logs.append(TraceJumpLog(
            np.array([e[1] for e in ent], dtype=np.int64), np.array([e[2] for e in ent]),
            np.array([e[3] for e in ent], dtype=bool),
            float(m.get("delta_time", 0.0) or 0.0), float(m.get("total_time", 0.0) or 0.0),
            theta, float(dt) if dt is not None else math.nan, run,
            float(first) if first is not None else math.nan, m.get("status", "ok")))
    return logs
