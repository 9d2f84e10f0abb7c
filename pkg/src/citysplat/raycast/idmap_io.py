"""Raw label-grid files.

A map set ``<stem>`` consists of ``<stem>.json`` (header: version, view_id,
width, height, and one entry per grid with its dtype) plus one raw file per
grid, ``<stem>.<name>.i32`` (little-endian int32) or ``<stem>.<name>.f32``
(little-endian float32), stored row-major.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from citysplat import ARTIFACT_VERSION
from citysplat.binio import FormatError

_DTYPES = {"i32": "<i4", "f32": "<f4"}


def write_grids(stem: str | Path, view_id: int, grids: dict[str, np.ndarray]) -> list[Path]:
    stem = Path(stem)
    shapes = {g.shape for g in grids.values()}
    if len(shapes) != 1:
        raise ValueError("all grids must share one resolution")
    (h, w) = shapes.pop()
    written = []
    entries = {}
    for name, grid in grids.items():
        kind = "f32" if np.issubdtype(grid.dtype, np.floating) else "i32"
        path = stem.with_name(f"{stem.name}.{name}.{kind}")
        path.write_bytes(np.ascontiguousarray(grid, dtype=_DTYPES[kind]).tobytes())
        entries[name] = {"file": path.name, "dtype": kind}
        written.append(path)
    header = {"version": ARTIFACT_VERSION, "view_id": int(view_id), "width": w, "height": h, "grids": entries}
    hpath = stem.with_name(stem.name + ".json")
    hpath.write_text(json.dumps(header, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return [hpath] + written


def read_grids(stem: str | Path) -> tuple[int, dict[str, np.ndarray]]:
    stem = Path(stem)
    header = json.loads(stem.with_name(stem.name + ".json").read_text(encoding="utf-8"))
    if header.get("version") != ARTIFACT_VERSION:
        raise FormatError(f"{stem}: artifact version {header.get('version')} unsupported")
    h, w = header["height"], header["width"]
    out = {}
    for name, ent in header["grids"].items():
        raw = np.fromfile(stem.with_name(ent["file"]), dtype=_DTYPES[ent["dtype"]])
        arr = raw.reshape(h, w)
        out[name] = arr.astype(np.float64 if ent["dtype"] == "f32" else np.int64)
    return header["view_id"], out
