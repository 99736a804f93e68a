"""Tiny view-scoring network with hand-written backpropagation.

Pipeline: 3 conv layers (3x3, ReLU, stride 2 on the second) over the whole
image, RoI sampling of every candidate view, then a 3-layer FC head that
emits one score per view.  With ``roi_kind="none"`` each view is instead
cropped from the image, warped to a fixed size and run through the backbone
on its own.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..roi import RoIConfig, RoISampler
from ..tensor import interp_matrix

__all__ = [
    "ROI_KINDS",
    "CONV_SPEC",
    "init_params",
    "conv2d_forward",
    "conv2d_backward",
    "ViewScorer",
    "forward_score",
]

ROI_KINDS = ("none", "pool", "align", "warp", "refine")
# (out_channels, stride) per conv layer; input has 3 channels
CONV_SPEC = ((8, 1), (16, 2), (16, 1))

Params = Dict[str, np.ndarray]


def init_params(
    seed: int = 0,
    roi_size: int = 7,
    fc_sizes: Sequence[int] = (64, 32),
    fc_std: float = 0.01,
    conv_init: str = "he",
    fc_init: str = "normal",
) -> Params:
    """Fresh parameters with zero biases.

    ``"normal"`` draws weights from ``N(0, fc_std)``; ``"he"`` uses
    ``N(0, sqrt(2 / fan_in))``.  Conv layers default to He, FC layers to the
    fixed normal.
    """
    for name, v in (("conv_init", conv_init), ("fc_init", fc_init)):
        if v not in ("normal", "he"):
            raise ValueError(f"{name}: expected 'normal' or 'he', got {v!r}")
    rng = np.random.default_rng(seed)
    p: Params = OrderedDict()
    cin = 3
    for i, (cout, _) in enumerate(CONV_SPEC, 1):
        fan_in = cin * 9
        std = np.sqrt(2.0 / fan_in) if conv_init == "he" else fc_std
        p[f"conv{i}.w"] = rng.normal(0.0, std, size=(cout, cin, 3, 3))
        p[f"conv{i}.b"] = np.zeros(cout)
        cin = cout
    sizes = [cin * roi_size * roi_size, *fc_sizes, 1]
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]), 1):
        std = np.sqrt(2.0 / a) if fc_init == "he" else fc_std
        p[f"fc{i}.w"] = rng.normal(0.0, std, size=(a, b))
        p[f"fc{i}.b"] = np.zeros(b)
    return p


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """3x3 'same'-padded convolution of ``(N, C, H, W)``; returns output and cache."""
    n, c, h, wd = x.shape
    cout, _, kh, kw = w.shape
    pad = kh // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ w.reshape(cout, -1).T + b
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    return out, (x.shape, cols, stride)


def conv2d_backward(dout: np.ndarray, w: np.ndarray, cache, need_dx: bool = True):
    xshape, cols, stride = cache
    n, c, h, wd = xshape
    cout, _, kh, kw = w.shape
    pad = kh // 2
    ho, wo = dout.shape[2], dout.shape[3]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(cout, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, pad:pad + h, pad:pad + wd], dw, db


def _relu_backward(dout, act):
    return dout * (act > 0)


def crop_and_warp(image: np.ndarray, boxes: np.ndarray, size: int) -> np.ndarray:
    """Bilinear crops of ``image`` for every box, each resized to ``size x size``."""
    _, h, w = image.shape
    t = np.arange(size) / (size - 1) if size > 1 else np.zeros(1)
    ys = (boxes[:, 1, None] + t * (boxes[:, 3] - boxes[:, 1])[:, None]) * (h - 1)
    xs = (boxes[:, 0, None] + t * (boxes[:, 2] - boxes[:, 0])[:, None]) * (w - 1)
    ry = interp_matrix(ys, h)
    rx = interp_matrix(xs, w)
    # (B, size, H) x (C, H, W) x (B, size, W) -> (B, C, size, size)
    tmp = np.einsum("bih,chw->bciw", ry, image)
    return np.einsum("bciw,bjw->bcij", tmp, rx)


class ViewScorer:
    """Scores candidate views of a batch of images; keeps a cache for backward."""

    def __init__(self, params: Params, roi_kind: str = "refine", roi_cfg: Optional[RoIConfig] = None):
        if roi_kind not in ROI_KINDS:
            raise ValueError(f"unknown roi_kind {roi_kind!r}; expected one of {ROI_KINDS}")
        self.params = params
        self.roi_kind = roi_kind
        roi_size = self._roi_size(params)
        if roi_cfg is None:
            roi_cfg = RoIConfig("refine" if roi_kind == "none" else roi_kind, output_size=roi_size)
        elif roi_kind != "none" and roi_cfg.kind != roi_kind:
            raise ValueError(f"roi_cfg.kind {roi_cfg.kind!r} disagrees with roi_kind {roi_kind!r}")
        if roi_cfg.output_size != roi_size:
            raise ValueError(f"RoI output size {roi_cfg.output_size} does not match FC input ({roi_size})")
        self.roi_cfg = roi_cfg
        self._cache = None

    @staticmethod
    def _roi_size(params: Params) -> int:
        cfeat = params[f"conv{len(CONV_SPEC)}.w"].shape[0]
        side = int(round(np.sqrt(params["fc1.w"].shape[0] / cfeat)))
        if cfeat * side * side != params["fc1.w"].shape[0]:
            raise ValueError("fc1 input size is not channels * side**2")
        return side

    def _backbone(self, x):
        caches = []
        for i, (_, stride) in enumerate(CONV_SPEC, 1):
            z, cache = conv2d_forward(x, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"], stride)
            x = np.maximum(z, 0.0)
            caches.append((cache, x))
        return x, caches

    def _backbone_backward(self, dx, caches, grads):
        for i in range(len(CONV_SPEC), 0, -1):
            cache, act = caches[i - 1]
            dz = _relu_backward(dx, act)
            dx, dw, db = conv2d_backward(dz, self.params[f"conv{i}.w"], cache, need_dx=i > 1)
            grads[f"conv{i}.w"] = dw
            grads[f"conv{i}.b"] = db

    def forward(self, images: Sequence[np.ndarray], view_lists: Sequence[np.ndarray]) -> List[np.ndarray]:
        """One score array per image, aligned with that image's views."""
        if len(images) != len(view_lists):
            raise ValueError("need one view list per image")
        counts = [len(v) for v in view_lists]
        side = self.roi_cfg.output_size
        if self.roi_kind == "none":
            crops = np.concatenate(
                [crop_and_warp(np.asarray(img, dtype=np.float64), np.asarray(v, dtype=np.float64), 2 * side)
                 for img, v in zip(images, view_lists)]
            )
            feats, caches = self._backbone(crops)
            if feats.shape[2:] != (side, side):
                raise ValueError(f"backbone output {feats.shape[2:]} does not match RoI size {side}")
            samplers = None
            x = feats.reshape(len(crops), -1)
        else:
            batch = np.stack([np.asarray(img, dtype=np.float64) for img in images])
            if batch.ndim != 4 or batch.shape[1] != 3:
                raise ValueError(f"images must be (3, H, W), got {batch.shape[1:]}")
            feats, caches = self._backbone(batch)
            samplers = []
            rois = []
            for fmap, views in zip(feats, view_lists):
                s = RoISampler(self.roi_cfg)
                rois.append(s.forward(fmap, views))
                samplers.append(s)
            x = np.concatenate(rois).reshape(sum(counts), -1)

        p = self.params
        h1 = np.maximum(x @ p["fc1.w"] + p["fc1.b"], 0.0)
        h2 = np.maximum(h1 @ p["fc2.w"] + p["fc2.b"], 0.0)
        scores = (h2 @ p["fc3.w"] + p["fc3.b"])[:, 0]
        self._cache = (counts, feats.shape, caches, samplers, x, h1, h2)
        return np.split(scores, np.cumsum(counts)[:-1])

    def backward(self, dscores: Sequence[np.ndarray]) -> Params:
        """Parameter gradients given d(loss)/d(score) per view list."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        counts, fshape, caches, samplers, x, h1, h2 = self._cache
        p = self.params
        g: Params = OrderedDict()
        ds = np.concatenate([np.asarray(d, dtype=np.float64).reshape(-1) for d in dscores])[:, None]
        if ds.shape[0] != x.shape[0]:
            raise ValueError("dscores do not match the forward view counts")
        g["fc3.w"] = h2.T @ ds
        g["fc3.b"] = ds.sum(axis=0)
        dh2 = _relu_backward(ds @ p["fc3.w"].T, h2)
        g["fc2.w"] = h1.T @ dh2
        g["fc2.b"] = dh2.sum(axis=0)
        dh1 = _relu_backward(dh2 @ p["fc2.w"].T, h1)
        g["fc1.w"] = x.T @ dh1
        g["fc1.b"] = dh1.sum(axis=0)
        dx = dh1 @ p["fc1.w"].T

        if samplers is None:
            dfeat = dx.reshape(fshape)
        else:
            dfeat = np.zeros(fshape)
            side = self.roi_cfg.output_size
            offsets = np.cumsum([0] + counts)
            for i, s in enumerate(samplers):
                d = dx[offsets[i]:offsets[i + 1]].reshape(counts[i], fshape[1], side, side)
                dfeat[i] = s.backward(d)
        self._backbone_backward(dfeat, caches, g)
        return OrderedDict((k, g[k]) for k in p)


def forward_score(params: Params, image: np.ndarray, views, roi_kind: str = "refine",
                  cfg: Optional[RoIConfig] = None) -> np.ndarray:
    """Scores of ``views`` (``(n, 4)`` normalized boxes) on a single image."""
    return ViewScorer(params, roi_kind, cfg).forward([image], [np.asarray(views, dtype=np.float64)])[0]
