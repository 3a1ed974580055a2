"""Deterministic report emission.

JSON is written by a small recursive emitter rather than json.dumps so that
every float is printed with 17 significant digits (%.17g, which round-trips
binary64 exactly) and the byte stream depends only on the data: dict keys
keep insertion order, None-valued keys are dropped (optional sections are
omitted, never null-filled), and there are no timestamps. Non-finite floats
have no JSON spelling and are emitted as the strings "inf", "-inf", "nan".
"""

from __future__ import annotations

import json
import math

import numpy as np


class ReportError(ValueError):
    pass


def format_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return "%.17g" % x


def _emit(obj, parts: list, indent: int) -> None:
    pad = "  " * indent
    if obj is None:
        parts.append("null")
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        parts.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(format_float(float(obj)))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), parts, indent)
    elif isinstance(obj, (list, tuple)):
        if not obj:
            parts.append("[]")
            return
        parts.append("[")
        for i, item in enumerate(obj):
            parts.append("\n" + pad + "  ")
            _emit(item, parts, indent + 1)
            if i + 1 < len(obj):
                parts.append(",")
        parts.append("\n" + pad + "]")
    elif isinstance(obj, dict):
        items = [(k, v) for k, v in obj.items() if v is not None]
        if not items:
            parts.append("{}")
            return
        parts.append("{")
        for i, (key, value) in enumerate(items):
            if not isinstance(key, str):
                raise ReportError(f"report keys must be strings, got {type(key).__name__}")
            parts.append("\n" + pad + "  " + json.dumps(key) + ": ")
            _emit(value, parts, indent + 1)
            if i + 1 < len(items):
                parts.append(",")
        parts.append("\n" + pad + "}")
    else:
        raise ReportError(f"cannot serialize {type(obj).__name__} into a report")


def report_to_json(report: dict) -> str:
    """Serialize a report dict to deterministic, round-trippable JSON text."""
    parts: list = []
    _emit(report, parts, 0)
    parts.append("\n")
    return "".join(parts)


def convergence_to_csv(rows: list[dict], columns: list[str]) -> str:
    """CSV table with a '# columns:' header comment; missing cells stay empty."""
    lines = ["# columns: " + ", ".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            val = row.get(col)
            if val is None:
                cells.append("")
            elif isinstance(val, (float, np.floating)):
                f = float(val)
                if math.isfinite(f):
                    cells.append("%.17g" % f)
                elif math.isnan(f):
                    cells.append("nan")
                else:
                    cells.append("inf" if f > 0 else "-inf")
            else:
                cells.append(str(val))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
