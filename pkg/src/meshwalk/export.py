"""Deterministic CSV/JSON writers.

Floats are written with ``repr`` (shortest round-trip form), complex values
as paired ``_re``/``_im`` columns, and JSON with sorted keys, so identical
numbers always give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "nan" if np.isnan(x) else repr(x)
    if x is None:
        return ""
    return str(x)


def split_complex(columns: dict) -> dict:
    """Expand complex-valued columns into name_re / name_im."""
    out = {}
    for name, col in columns.items():
        arr = np.asarray(col)
        if np.iscomplexobj(arr):
            out[f"{name}_re"], out[f"{name}_im"] = arr.real, arr.imag
        else:
            out[name] = arr
    return out


def write_csv(path, columns: dict) -> Path:
    """Write equal-length columns (given in order) to ``path``."""
    cols = split_complex(columns)
    lengths = {len(np.atleast_1d(c)) for c in cols.values()}
    if len(lengths) > 1:
        raise ValueError(f"columns have different lengths: {sorted(lengths)}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = [np.atleast_1d(c) for c in cols.values()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in zip(*data):
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if not np.isfinite(x) else x
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path, data: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
