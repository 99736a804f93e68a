"""RoI feature samplers: RoIPool, RoIAlign, RoIWarp and RoIRefine.

Each kernel turns a full-image feature map ``(C, H, W)`` plus a list of
normalized boxes into fixed-size features ``(N, C, S, S)``.  They differ in
where bilinear interpolation happens relative to the crop:

========  ==================================  ==============================
kind      pipeline                            sampling grid per output cell
========  ==================================  ==============================
pool      crop (quantized) + pool             integer cells of the bin
align     interp + crop + pool                ``k x k`` bilinear points
warp      crop (quantized) + interp + pool    ``2 x 2`` bilinear points
refine    interp + crop + interp + pool       ``2 x 2`` points on the
                                              upsampled map
========  ==================================  ==============================

Boxes are mapped to pixel coordinates by scaling with ``(W - 1, H - 1)``
(align-corners).  Quantization rounds half away from zero.

All samplers except max-mode RoIPool are separable: the sample grid of box
``b`` is ``Ry[b] @ F[c] @ Rx[b].T`` for interpolation matrices ``Ry``/``Rx``.
For RoIRefine the full-map upsample is folded into those matrices
(``Ry = Wy @ Uy``), which is exact by linearity and avoids materializing the
upsampled map.  Average pooling is folded in as well; max pooling picks the
first maximum of each ``k x k`` block in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .boxes import as_box_array
from .tensor import as_feature_map, interp_matrix, upsample_matrix

__all__ = ["KINDS", "RoIConfig", "RoISampler", "roi_forward", "roi_backward"]

KINDS = ("pool", "align", "warp", "refine")
_DEFAULT_POOL_MODE = {"pool": "max", "align": "average", "warp": "average", "refine": "average"}


@dataclass(frozen=True)
class RoIConfig:
    """Parameters of an RoI sampling kernel.

    ``pool_mode`` defaults to ``"max"`` for RoIPool and ``"average"`` for the
    interpolating kernels.  ``upsample_factor`` only affects RoIRefine and
    ``samples_per_bin`` only RoIAlign.
    """

    kind: str = "refine"
    output_size: int = 14
    upsample_factor: int = 2
    pool_mode: Optional[str] = None
    samples_per_bin: int = 2

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in KINDS:
            raise ValueError(f"unknown RoI kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        mode = self.pool_mode or _DEFAULT_POOL_MODE[kind]
        mode = {"avg": "average", "mean": "average"}.get(mode, mode)
        if mode not in ("max", "average"):
            raise ValueError(f"pool_mode must be 'max' or 'average', got {self.pool_mode!r}")
        object.__setattr__(self, "pool_mode", mode)
        for name in ("output_size", "upsample_factor", "samples_per_bin"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def block(self) -> int:
        """Sample points per output cell along each axis (interpolating kinds)."""
        if self.kind == "align":
            return self.samples_per_bin
        return 2


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _quantize(lo: np.ndarray, hi: np.ndarray, size: int):
    """Integer cell range ``[r0, r1]`` (inclusive) covering ``[lo, hi]``."""
    r0 = np.clip(_round_half_away(lo), 0, size - 1).astype(np.intp)
    r1 = np.clip(_round_half_away(hi), 0, size - 1).astype(np.intp)
    # at least one cell, never an error
    r1 = np.maximum(r1, r0)
    return r0, r1


def _pool_bins(r0: np.ndarray, r1: np.ndarray, out: int):
    """Bin start/end/anchor cells for partitioning ``[r0, r1]`` into ``out`` bins."""
    count = (r1 - r0 + 1)[:, None]
    i = np.arange(out + 1)[None, :]
    edges = r0[:, None] + _round_half_away(i * count / out).astype(np.intp)
    start, end = edges[:, :-1], edges[:, 1:]
    anchor = np.minimum(start, r1[:, None])
    return start, end, anchor


def _pool_average_matrix(r0, r1, out: int, size: int) -> np.ndarray:
    start, end, anchor = _pool_bins(r0, r1, out)
    cells = np.arange(size)[None, None, :]
    inside = (cells >= start[..., None]) & (cells < end[..., None])
    empty = (end <= start)[..., None]
    inside = np.where(empty, cells == anchor[..., None], inside)
    return inside / inside.sum(axis=-1, keepdims=True)


def _pool_index_table(r0: int, r1: int, out: int) -> np.ndarray:
    """Cells of each bin, padded by repeating the last cell: ``(out, K)``."""
    start, end, anchor = _pool_bins(np.array([r0]), np.array([r1]), out)
    start, end, anchor = start[0], end[0], anchor[0]
    lengths = np.maximum(end - start, 1)
    k = int(lengths.max())
    offs = np.minimum(np.arange(k)[None, :], lengths[:, None] - 1)
    base = np.where(end > start, start, anchor)
    return base[:, None] + offs


class RoISampler:
    """Forward/backward RoI sampling for one configuration.

    ``forward`` caches what ``backward`` needs (interpolation matrices and
    max-pool winners), so a training step calls them in that order.
    """

    def __init__(self, cfg: RoIConfig):
        self.cfg = cfg
        self._cache = None

    # -- sampling plans ---------------------------------------------------
    def _axis_matrix(self, lo: np.ndarray, hi: np.ndarray, size: int) -> np.ndarray:
        """Per-box interpolation matrices along one axis, ``(B, m, size)``."""
        cfg = self.cfg
        out = cfg.output_size
        if cfg.kind == "pool":
            r0, r1 = _quantize(lo, hi, size)
            return _pool_average_matrix(r0, r1, out, size)
        k = cfg.block
        n = out * k
        if cfg.kind == "align":
            step = (hi - lo) / out
            frac = (np.arange(out)[:, None] + (np.arange(k)[None, :] + 0.5) / k).reshape(-1)
            coords = lo[:, None] + frac[None, :] * step[:, None]
            return interp_matrix(coords, size)
        t = np.arange(n) / (n - 1) if n > 1 else np.zeros(1)
        if cfg.kind == "warp":
            r0, r1 = _quantize(lo, hi, size)
            coords = r0[:, None] + t[None, :] * (r1 - r0)[:, None]
            return interp_matrix(coords, size)
        # refine: box on the upsampled grid, then compose with the upsample
        f = cfg.upsample_factor
        up = size * f
        scale = (up - 1) / (size - 1) if size > 1 else 0.0
        lo_u, hi_u = lo * scale, hi * scale
        coords = lo_u[:, None] + t[None, :] * (hi_u - lo_u)[:, None]
        return interp_matrix(coords, up) @ upsample_matrix(size, f)

    def plan(self, shape, boxes: np.ndarray):
        """Return ``(Ry, Rx, k)``; ``k`` is the pooling block left to apply."""
        _, h, w = shape
        x0 = boxes[:, 0] * (w - 1)
        x1 = boxes[:, 2] * (w - 1)
        y0 = boxes[:, 1] * (h - 1)
        y1 = boxes[:, 3] * (h - 1)
        ry = self._axis_matrix(y0, y1, h)
        rx = self._axis_matrix(x0, x1, w)
        k = 1 if self.cfg.kind == "pool" else self.cfg.block
        if self.cfg.pool_mode == "average" and k > 1:
            b, m, _ = ry.shape
            ry = ry.reshape(b, m // k, k, h).mean(axis=2)
            rx = rx.reshape(b, m // k, k, w).mean(axis=2)
            k = 1
        return ry, rx, k

    @staticmethod
    def _support(mat: np.ndarray):
        nz = np.any(mat != 0, axis=1)
        lo = np.argmax(nz, axis=1)
        hi = nz.shape[1] - np.argmax(nz[:, ::-1], axis=1)
        return lo, hi

    # -- passes -----------------------------------------------------------
    def forward(self, fmap, boxes) -> np.ndarray:
        fmap = as_feature_map(fmap)
        boxes = as_box_array(boxes)
        c, h, w = fmap.shape
        s = self.cfg.output_size
        out = np.empty((len(boxes), c, s, s))
        if len(boxes) == 0:
            self._cache = (fmap.shape, boxes, None)
            return out
        if self.cfg.kind == "pool" and self.cfg.pool_mode == "max":
            winners = self._pool_max_forward(fmap, boxes, out)
            self._cache = (fmap.shape, boxes, ("pool_max", winners))
            return out

        ry, rx, k = self.plan(fmap.shape, boxes)
        ylo, yhi = self._support(ry)
        xlo, xhi = self._support(rx)
        winners = np.empty((len(boxes), c, s, s), dtype=np.intp) if k > 1 else None
        for b in range(len(boxes)):
            a, e, p, q = ylo[b], yhi[b], xlo[b], xhi[b]
            grid = ry[b][:, a:e] @ (fmap[:, a:e, p:q] @ rx[b][:, p:q].T)
            if k == 1:
                out[b] = grid
            else:
                blocks = grid.reshape(c, s, k, s, k).transpose(0, 1, 3, 2, 4).reshape(c, s, s, k * k)
                idx = np.argmax(blocks, axis=-1)
                winners[b] = idx
                out[b] = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        self._cache = (fmap.shape, boxes, ("linear", ry, rx, k, ylo, yhi, xlo, xhi, winners))
        return out

    def _pool_max_forward(self, fmap, boxes, out):
        c, h, w = fmap.shape
        s = self.cfg.output_size
        ry0, ry1 = _quantize(boxes[:, 1] * (h - 1), boxes[:, 3] * (h - 1), h)
        rx0, rx1 = _quantize(boxes[:, 0] * (w - 1), boxes[:, 2] * (w - 1), w)
        flat = fmap.reshape(c, h * w)
        winners = np.empty((len(boxes), c, s, s), dtype=np.intp)
        for b in range(len(boxes)):
            rows = _pool_index_table(ry0[b], ry1[b], s)
            cols = _pool_index_table(rx0[b], rx1[b], s)
            cells = rows[:, None, :, None] * w + cols[None, :, None, :]
            cells = cells.reshape(s, s, -1)
            vals = flat[:, cells]
            idx = np.argmax(vals, axis=-1)
            out[b] = np.take_along_axis(vals, idx[..., None], axis=-1)[..., 0]
            winners[b] = np.take_along_axis(np.broadcast_to(cells, vals.shape), idx[..., None], axis=-1)[..., 0]
        return winners

    def backward(self, grad_out) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        shape, boxes, state = self._cache
        c, h, w = shape
        s = self.cfg.output_size
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != (len(boxes), c, s, s):
            raise ValueError(f"grad_out shape {grad_out.shape} != {(len(boxes), c, s, s)}")
        grad = np.zeros(shape)
        if len(boxes) == 0:
            return grad
        if state[0] == "pool_max":
            winners = state[1]
            flat = grad.reshape(c, h * w)
            chan = np.arange(c)[None, :, None, None]
            np.add.at(flat, (np.broadcast_to(chan, winners.shape), winners), grad_out)
            return grad

        _, ry, rx, k, ylo, yhi, xlo, xhi, winners = state
        for b in range(len(boxes)):
            if k == 1:
                g = grad_out[b]
            else:
                blocks = np.zeros((c, s, s, k * k))
                np.put_along_axis(blocks, winners[b][..., None], grad_out[b][..., None], axis=-1)
                g = blocks.reshape(c, s, s, k, k).transpose(0, 1, 3, 2, 4).reshape(c, s * k, s * k)
            a, e, p, q = ylo[b], yhi[b], xlo[b], xhi[b]
            grad[:, a:e, p:q] += ry[b][:, a:e].T @ g @ rx[b][:, p:q]
        return grad


def roi_forward(fmap, boxes, cfg: RoIConfig) -> np.ndarray:
    """Sample ``(N, C, S, S)`` RoI features; row ``i`` belongs to ``boxes[i]``."""
    return RoISampler(cfg).forward(fmap, boxes)


def roi_backward(map_shape, boxes, cfg: RoIConfig, grad_out, feature_map=None) -> np.ndarray:
    """Gradient of ``sum(grad_out * roi_forward(map, boxes, cfg))`` w.r.t. the map.

    Max pooling needs to know which sample won each cell, so ``feature_map``
    is required when ``cfg.pool_mode == "max"``.  For average pooling the
    result depends only on the shape.
    """
    map_shape = tuple(int(v) for v in map_shape)
    if len(map_shape) != 3:
        raise ValueError(f"map_shape must be (C, H, W), got {map_shape}")
    sampler = RoISampler(cfg)
    if cfg.pool_mode == "max":
        if feature_map is None:
            raise ValueError("max pooling backward needs the forward feature_map")
        if tuple(np.shape(feature_map)) != map_shape:
            raise ValueError(f"feature_map shape {np.shape(feature_map)} != map_shape {map_shape}")
        sampler.forward(feature_map, boxes)
    else:
        # forward on zeros only builds the plan; output values are irrelevant
        sampler.forward(np.zeros(map_shape), boxes)
    return sampler.backward(grad_out)
