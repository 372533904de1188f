"""Input validation helpers shared by the estimators and the CLI."""
from __future__ import annotations

from typing import Sequence, Tuple, Union

import numpy as np

MIN_GRID = 2


def check_box(box: Union[str, Sequence[float]], m: int = 2) -> Tuple[float, ...]:
    """Parse and validate ``(lo1, hi1, ..., lom, him)``; strings use commas."""
    if isinstance(box, str):
        box = [float(t) for t in box.split(",")]
    box = tuple(float(b) for b in box)
    if len(box) != 2 * m:
        raise ValueError(f"box needs {2 * m} numbers, got {len(box)}")
    if not all(np.isfinite(box)):
        raise ValueError("box bounds must be finite")
    for j in range(m):
        if not box[2 * j] < box[2 * j + 1]:
            raise ValueError(f"box axis {j + 1}: lo={box[2 * j]} is not below hi={box[2 * j + 1]}")
    return box


def check_grid_shape(shape, m: int = 2, minimum: int = MIN_GRID) -> Tuple[int, ...]:
    if np.isscalar(shape):
        shape = (int(shape),) * m
    shape = tuple(int(s) for s in shape)
    if len(shape) != m:
        raise ValueError(f"grid shape needs {m} entries")
    if any(s < minimum for s in shape):
        raise ValueError(f"grid needs at least {minimum} cells per axis, got {shape}")
    return shape


def check_points(X, m: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[-1] != m:
        raise ValueError(f"points must have {m} coordinates")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    return X
