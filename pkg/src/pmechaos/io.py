"""Artifact persistence: CSV tables, JSON reports, ``.npy`` arrays with JSON sidecars.

Floats are written with ``repr`` (shortest round-trip form), so identical
numbers always produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os

import numpy as np

__all__ = ["CSV_FIELDS", "load_array", "read_csv", "save_array", "sha256_file", "write_csv", "write_json"]

# Diagnostic rows are keyed by experiment, N, eta, beta, t and replica ("pooled" for pooled values).
CSV_FIELDS = ("experiment", "n", "eta", "beta", "t", "replica", "metric", "value")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path, rows, fieldnames=CSV_FIELDS):
    """Write dict rows with a fixed column order and ``\\n`` line endings."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fieldnames)
    for row in rows:
        w.writerow([_cell(row.get(k)) for k in fieldnames])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")
    return path


def save_array(path, array, **meta):
    """Save ``array`` as ``.npy`` plus a ``.json`` sidecar with shape, dtype and ``meta``."""
    array = np.ascontiguousarray(array)
    np.save(path, array, allow_pickle=False)
    side = os.path.splitext(path)[0] + ".json"
    write_json(side, {"shape": list(array.shape), "dtype": str(array.dtype), **meta})
    return path, side


def load_array(path):
    """Inverse of :func:`save_array`: returns ``(array, meta)``."""
    array = np.load(path, allow_pickle=False)
    with open(os.path.splitext(path)[0] + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    return array, meta


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
