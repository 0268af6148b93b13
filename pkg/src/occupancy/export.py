"""CSV and JSON writers shared by the command line and the library."""

from __future__ import annotations

import io
import json
import math
import sys
from typing import Any, Mapping, Sequence

import numpy as np

__all__ = ["format_float", "jsonable", "to_csv", "write_text"]


def format_float(v) -> str:
    """17 significant digits, enough to round-trip any double."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def jsonable(obj: Any) -> Any:
    """Convert numpy containers and non-finite floats into plain JSON values."""
    if isinstance(obj, Mapping):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def to_csv(columns: Mapping[str, Sequence]) -> str:
    """Render equally long columns as CSV with a header row."""
    names = list(columns)
    lengths = {len(columns[n]) for n in names}
    if len(lengths) > 1:
        raise ValueError("columns differ in length")
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    for row in zip(*(columns[n] for n in names)):
        buf.write(",".join(format_float(v) for v in row) + "\n")
    return buf.getvalue()


def to_json(obj: Any) -> str:
    return json.dumps(jsonable(obj), indent=2) + "\n"


def write_text(text: str, path: str | None) -> None:
    """Write to ``path``, or to standard output when path is None or '-'."""
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
