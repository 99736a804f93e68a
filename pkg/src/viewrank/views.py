"""Candidate view generation and cropping metrics.

Windows are laid out on a sliding grid for every (scale, aspect ratio) pair,
optionally filtered by minimum image coverage, then thinned by greedy NMS in
generation order.  A scale ``s`` means the window covers ``s**2`` of the image
area; a ratio is ``width / height`` in normalized units.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .boxes import Box, as_box_array, validate_box

__all__ = [
    "DEFAULT_SCALES",
    "DEFAULT_RATIOS",
    "SlidingWindowConfig",
    "Annotation",
    "parse_ratio",
    "window_shape",
    "generate_windows",
    "iou",
    "iou_matrix",
    "nms",
    "boundary_displacement",
    "top1_max_iou",
    "pick_best_view",
]

DEFAULT_SCALES = (0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9)
DEFAULT_RATIOS = ("1:1", "3:4", "4:3", "9:16", "16:9")
_EPS = 1e-9


def parse_ratio(ratio: Union[str, float, Tuple[float, float]]) -> float:
    """``"16:9"``, ``(16, 9)`` or ``1.777`` -> width/height as a float."""
    try:
        if isinstance(ratio, str):
            w, sep, h = ratio.partition(":")
            value = float(Fraction(w)) / float(Fraction(h)) if sep else float(w)
        elif isinstance(ratio, (tuple, list)):
            value = float(ratio[0]) / float(ratio[1])
        else:
            value = float(ratio)
    except (ValueError, TypeError, ZeroDivisionError, IndexError) as exc:
        raise ValueError(f"invalid aspect ratio {ratio!r}") from exc
    if not value > 0 or not math.isfinite(value):
        raise ValueError(f"invalid aspect ratio {ratio!r}")
    return value


@dataclass
class SlidingWindowConfig:
    scales: Sequence[float] = DEFAULT_SCALES
    aspect_ratios: Sequence[str] = DEFAULT_RATIOS
    stride: float = 0.05
    nms_iou_threshold: float = 1.0
    min_coverage: float = 0.0

    def __post_init__(self):
        self.scales = [float(s) for s in self.scales]
        self.aspect_ratios = [r if isinstance(r, str) else f"{r[0]}:{r[1]}" if isinstance(r, (tuple, list)) else str(r)
                              for r in self.aspect_ratios]
        if not self.scales or any(not 0 < s <= 1 for s in self.scales):
            raise ValueError(f"scales must lie in (0, 1], got {self.scales}")
        if sorted(self.scales) != list(self.scales):
            raise ValueError("scales must be sorted ascending")
        for r in self.aspect_ratios:
            parse_ratio(r)
        if not 0 < self.stride <= 1:
            raise ValueError(f"stride must lie in (0, 1], got {self.stride}")
        if not 0 < self.nms_iou_threshold <= 1:
            raise ValueError(f"nms_iou_threshold must lie in (0, 1], got {self.nms_iou_threshold}")
        if not 0 <= self.min_coverage <= 1:
            raise ValueError(f"min_coverage must lie in [0, 1], got {self.min_coverage}")

    @classmethod
    def from_json(cls, path) -> "SlidingWindowConfig":
        data = json.loads(Path(path).read_text())
        known = {k: data[k] for k in ("scales", "aspect_ratios", "stride", "nms_iou_threshold", "min_coverage") if k in data}
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Annotation:
    image_id: str
    gt_boxes: List[Box] = field(default_factory=list)

    def __post_init__(self):
        self.gt_boxes = [validate_box(b) for b in self.gt_boxes]
        if not self.gt_boxes:
            raise ValueError(f"annotation {self.image_id!r} has no boxes")


def window_shape(scale: float, ratio: float) -> Tuple[float, float]:
    """Width and height of a window with area ``scale**2`` and ``w/h == ratio``.

    If a side would exceed the image, it is clamped to 1 and the other side
    re-derived from the ratio, so the aspect ratio is kept and the area shrinks.
    """
    w = scale * math.sqrt(ratio)
    h = scale / math.sqrt(ratio)
    if w > 1:
        w, h = 1.0, 1.0 / ratio
    elif h > 1:
        w, h = ratio, 1.0
    return w, h


def _anchors(extent: float, stride: float) -> np.ndarray:
    room = 1.0 - extent
    if room < _EPS:
        return np.zeros(1)
    count = int(math.floor(room / stride + _EPS)) + 1
    pos = np.arange(count) * stride
    pos = pos[pos <= room + _EPS]
    if room - pos[-1] > _EPS:
        pos = np.append(pos, room)
    return np.minimum(pos, room)


def _dedup(boxes: np.ndarray) -> np.ndarray:
    if len(boxes) == 0:
        return boxes
    keys = np.round(boxes / _EPS).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return boxes[np.sort(first)]


def generate_windows(cfg: SlidingWindowConfig) -> np.ndarray:
    """Sliding windows in (scale, ratio, row, column) order, filtered and NMS'd."""
    out = []
    for scale in cfg.scales:
        for r in cfg.aspect_ratios:
            w, h = window_shape(scale, parse_ratio(r))
            xs = _anchors(w, cfg.stride)
            ys = _anchors(h, cfg.stride)
            yy, xx = np.meshgrid(ys, xs, indexing="ij")
            grid = np.stack([xx, yy, xx + w, yy + h], axis=-1).reshape(-1, 4)
            out.append(grid)
    boxes = np.concatenate(out) if out else np.zeros((0, 4))
    boxes = np.clip(boxes, 0.0, 1.0)
    boxes = _dedup(boxes)
    if cfg.min_coverage > 0:
        area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
        boxes = boxes[area >= cfg.min_coverage - _EPS]
    if cfg.nms_iou_threshold < 1.0:
        boxes = nms(boxes, cfg.nms_iou_threshold)
    return boxes


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix0 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy0 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix1 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy1 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix1 - ix0, 0, None) * np.clip(iy1 - iy0, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def iou(a, b) -> float:
    """Intersection over union of two boxes."""
    return float(iou_matrix(a, b)[0, 0])


def nms(boxes, iou_threshold: float) -> np.ndarray:
    """Greedy suppression in input order.

    A box is kept iff its IoU with every previously kept box is strictly below
    ``iou_threshold``.  There are no scores, so input order is the priority.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = len(boxes)
    if n == 0:
        return boxes.copy()
    x0, y0, x1, y1 = boxes.T
    areas = (x1 - x0) * (y1 - y0)
    kept = np.zeros(n, dtype=np.intp)
    nk = 0
    for i in range(n):
        if nk:
            k = kept[:nk]
            w = np.minimum(x1[i], x1[k]) - np.maximum(x0[i], x0[k])
            h = np.minimum(y1[i], y1[k]) - np.maximum(y0[i], y0[k])
            inter = np.clip(w, 0, None) * np.clip(h, 0, None)
            ov = inter / (areas[i] + areas[k] - inter)
            if np.any(ov >= iou_threshold):
                continue
        kept[nk] = i
        nk += 1
    return boxes[kept[:nk]]


def boundary_displacement(a, b) -> float:
    """Mean absolute offset of the four corresponding box edges."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.abs(a - b).sum() / 4.0)


def top1_max_iou(pred, ann: Union[Annotation, Sequence]) -> float:
    """Best IoU between ``pred`` and any of the annotated boxes."""
    gt = ann.gt_boxes if isinstance(ann, Annotation) else ann
    if len(gt) == 0:
        raise ValueError("annotation has no boxes")
    return float(iou_matrix(pred, gt).max())


def pick_best_view(boxes, scores) -> Box:
    """Box with the highest score; the lowest index wins ties."""
    boxes = as_box_array(boxes)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(boxes) != len(scores):
        raise ValueError(f"{len(boxes)} boxes but {len(scores)} scores")
    if len(boxes) == 0:
        raise ValueError("no boxes to pick from")
    return Box(*boxes[int(np.argmax(scores))])
