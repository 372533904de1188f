"""Report, raster and grid-dump formats.

* ``report.json``: UTF-8 JSON, keys sorted, two-space indent, trailing
  newline.  The top level always carries ``"schema": "amoebalab/1"`` and a
  ``"timestamp"``; everything else is a deterministic function of the
  configuration and seed.  Non-finite floats are written as ``null``.
* raster ``.ppm``: binary PPM (``P6``), one pixel per grid cell, first row at
  the highest ``x2``.  The amoeba (label 0) is black, complement component
  ``k`` gets ``PALETTE[(k - 1) % len(PALETTE)]``.
* ``ronkin.csv``: header ``x1,x2,R`` then one row per cell centre, ``x1``
  varying slowest, values printed with ``repr`` (shortest round-trip form).
"""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
from pathlib import Path
from typing import Any, Tuple, Union

import numpy as np

SCHEMA = "amoebalab/1"

PALETTE: Tuple[Tuple[int, int, int], ...] = (
    (230, 159, 0), (86, 180, 233), (0, 158, 115), (240, 228, 66),
    (0, 114, 178), (213, 94, 0), (204, 121, 167), (153, 153, 153),
)

PathLike = Union[str, Path]


def to_jsonable(obj: Any) -> Any:
    """Convert numpy scalars and arrays, complex numbers and dataclasses to plain JSON values."""
    if hasattr(obj, "to_json") and callable(obj.to_json):
        return to_jsonable(obj.to_json())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (complex, np.complexfloating)):
        return [to_jsonable(obj.real), to_jsonable(obj.imag)]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_report(report: dict, timestamp: bool = True) -> str:
    """Serialize ``report`` with the schema tag and (optionally) a UTC timestamp."""
    body = {**to_jsonable(report), "schema": SCHEMA}
    if timestamp:
        body["timestamp"] = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return json.dumps(body, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(path: PathLike, report: dict, timestamp: bool = True) -> None:
    Path(path).write_text(dumps_report(report, timestamp), encoding="utf-8")


def read_report(path: PathLike) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("schema") != SCHEMA:
        raise ValueError(f"unsupported report schema {data.get('schema')!r}")
    return data


def label_image(labels: np.ndarray) -> np.ndarray:
    """RGB image (rows from high ``x2`` down) for a label grid indexed ``[i1, i2]``."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label grids must be two-dimensional")
    img = np.zeros(labels.shape + (3,), dtype=np.uint8)
    pal = np.asarray(PALETTE, dtype=np.uint8)
    comp = labels > 0
    img[comp] = pal[(labels[comp] - 1) % len(pal)]
    return np.ascontiguousarray(img.transpose(1, 0, 2)[::-1])


def write_ppm(path: PathLike, labels: np.ndarray) -> None:
    img = label_image(labels)
    h, w = img.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    """Read a binary PPM written by :func:`write_ppm` into an ``(h, w, 3)`` array."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise ValueError("not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("only 8-bit PPM is supported")
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def write_grid_csv(path: PathLike, field) -> None:
    """Dump a two-dimensional ``GridField`` as ``x1,x2,R`` rows."""
    g = field.grid
    c1, c2 = g.axes()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x1", "x2", "R"])
        for i, a in enumerate(c1):
            for j, b in enumerate(c2):
                wr.writerow([repr(float(a)), repr(float(b)), repr(float(field.values[i, j]))])
