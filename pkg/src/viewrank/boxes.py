"""Axis-aligned boxes in normalized image coordinates."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Box(NamedTuple):
    """Rectangle ``(x0, y0)``-``(x1, y1)`` with all coordinates in ``[0, 1]``."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self):
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))


def validate_box(box) -> Box:
    """Return ``box`` as a :class:`Box`, raising ``ValueError`` if invalid."""
    if len(box) != 4:
        raise ValueError(f"box needs 4 coordinates, got {len(box)}")
    b = Box(*(float(v) for v in box))
    if not all(np.isfinite(b)):
        raise ValueError(f"box has non-finite coordinates: {b}")
    if not (0.0 <= b.x0 < b.x1 <= 1.0 and 0.0 <= b.y0 < b.y1 <= 1.0):
        raise ValueError(f"invalid box {tuple(b)}: need 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1")
    return b


def as_box_array(boxes) -> np.ndarray:
    """Validate a sequence of boxes and stack them into an ``(N, 4)`` array."""
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 4))
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"boxes must have shape (N, 4), got {arr.shape}")
    x0, y0, x1, y1 = arr.T
    ok = np.isfinite(arr).all(axis=1) & (x0 >= 0) & (x0 < x1) & (x1 <= 1) & (y0 >= 0) & (y0 < y1) & (y1 <= 1)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise ValueError(f"invalid box at index {bad}: {arr[bad].tolist()}")
    return arr
