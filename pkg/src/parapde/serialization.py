"""Field dumps, CSV export and deterministic JSON manifests.

Binary dumps are raw little-endian float64 with a JSON sidecar holding the
grid header.  Manifests print every float with 17 significant digits and
sorted keys so identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .spectral_core import Field, Grid, SpaceTimeField

__all__ = [
    "format_float",
    "dumps_manifest",
    "write_manifest",
    "save_field",
    "load_field",
    "save_spacetime",
    "load_spacetime",
    "write_field_csv",
    "write_csv",
]


def format_float(x: float) -> str:
    """Render a float with 17 significant digits (JSON compatible)."""
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, Path):
        return json.dumps(str(obj))
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(obj[k], indent, level + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if hasattr(obj, "to_json"):
        return _encode(obj.to_json(), indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_manifest(obj: Any, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def write_manifest(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_manifest(obj), encoding="utf-8")
    return path


def _prefix(path: str | Path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".bin", ".json") else p


def save_field(path: str | Path, f: Field) -> Path:
    """Write ``<path>.bin`` (float64 little-endian) and ``<path>.json`` (header)."""
    p = _prefix(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(f.values, dtype="<f8").tofile(p.with_suffix(".bin"))
    header = dict(f.grid.to_json())
    header["shape"] = list(f.values.shape)
    write_manifest(p.with_suffix(".json"), header)
    return p.with_suffix(".bin")


def load_field(path: str | Path) -> Field:
    p = _prefix(path)
    header = json.loads(p.with_suffix(".json").read_text())
    grid = Grid(header["dim"], header["N"], header["L"])
    v = np.fromfile(p.with_suffix(".bin"), dtype="<f8").reshape(header["shape"])
    return Field(grid, v)


def save_spacetime(path: str | Path, f: SpaceTimeField) -> Path:
    """Write a space-time field; the header also records the time grid."""
    p = _prefix(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(f.values, dtype="<f8").tofile(p.with_suffix(".bin"))
    header = dict(f.grid.to_json())
    header["shape"] = list(f.values.shape)
    header["times"] = [float(t) for t in f.times]
    write_manifest(p.with_suffix(".json"), header)
    return p.with_suffix(".bin")


def load_spacetime(path: str | Path) -> SpaceTimeField:
    p = _prefix(path)
    header = json.loads(p.with_suffix(".json").read_text())
    grid = Grid(header["dim"], header["N"], header["L"])
    v = np.fromfile(p.with_suffix(".bin"), dtype="<f8").reshape(header["shape"])
    return SpaceTimeField(grid, np.asarray(header["times"], dtype=float), v)


def write_csv(path: str | Path, header: list, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(v) if not isinstance(v, str) else v for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_field_csv(path: str | Path, f: Field) -> Path:
    """CSV with columns ``x,value`` for one-dimensional scalar fields."""
    if f.grid.dim != 1 or f.values.ndim != 1:
        raise ValueError("CSV export is defined for scalar one-dimensional fields")
    return write_csv(path, ["x", "value"], zip(f.grid.x, f.values))
