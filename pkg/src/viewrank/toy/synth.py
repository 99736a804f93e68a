"""Synthetic composition dataset.

Each image is a smooth random background with one bright blob (the
"subject").  Each view list holds candidate windows around and away from the
subject, scored by a fixed analytic composition rule::

    score = coverage - 0.5 * thirds_distance - 1.0 * truncation

``coverage`` is the fraction of the subject inside the view,
``thirds_distance`` the distance (in view-relative units) from the subject
centre to the nearest rule-of-thirds point, and ``truncation`` the largest
fraction of the subject cut off along either axis.  The rule is an artificial
ground truth; it only has to be learnable from pixels and sensitive to where
the subject sits inside the view.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from ..boxes import Box
from ..views import DEFAULT_RATIOS, parse_ratio

__all__ = [
    "THIRDS_WEIGHT",
    "TRUNCATION_WEIGHT",
    "SynthImage",
    "ViewList",
    "coverage",
    "thirds_distance",
    "truncation_penalty",
    "composition_score",
    "render_image",
    "sample_views",
    "synth_generate",
]

THIRDS_WEIGHT = 0.5
TRUNCATION_WEIGHT = 1.0
SUBJECT_MARGIN = 0.05
_THIRDS = np.array([[1 / 3, 1 / 3], [2 / 3, 1 / 3], [1 / 3, 2 / 3], [2 / 3, 2 / 3]])


@dataclass
class SynthImage:
    image: np.ndarray  # (3, H, W) in [0, 1]
    subject_box: Box
    seed: int


@dataclass
class ViewList:
    image_ref: int
    views: np.ndarray  # (n, 4)
    gt_scores: np.ndarray  # (n,)


def _as_boxes(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(-1, 4)


def coverage(subject, views) -> np.ndarray:
    """Fraction of the subject's area inside each view."""
    s = np.asarray(subject, dtype=np.float64)
    v = _as_boxes(views)
    w = np.clip(np.minimum(s[2], v[:, 2]) - np.maximum(s[0], v[:, 0]), 0, None)
    h = np.clip(np.minimum(s[3], v[:, 3]) - np.maximum(s[1], v[:, 1]), 0, None)
    return w * h / ((s[2] - s[0]) * (s[3] - s[1]))


def thirds_distance(center, views) -> np.ndarray:
    """Distance from ``center`` to the nearest thirds point, in view units."""
    v = _as_boxes(views)
    cx, cy = center
    u = (cx - v[:, 0]) / (v[:, 2] - v[:, 0])
    t = (cy - v[:, 1]) / (v[:, 3] - v[:, 1])
    d = np.hypot(u[:, None] - _THIRDS[None, :, 0], t[:, None] - _THIRDS[None, :, 1])
    return d.min(axis=1)


def truncation_penalty(subject, views) -> np.ndarray:
    """Largest per-axis fraction of the subject cut off by each view (0..1)."""
    s = np.asarray(subject, dtype=np.float64)
    v = _as_boxes(views)
    ox = np.clip(np.minimum(s[2], v[:, 2]) - np.maximum(s[0], v[:, 0]), 0, None) / (s[2] - s[0])
    oy = np.clip(np.minimum(s[3], v[:, 3]) - np.maximum(s[1], v[:, 1]), 0, None) / (s[3] - s[1])
    return np.maximum(1.0 - ox, 1.0 - oy)


def composition_score(subject, views) -> np.ndarray:
    s = np.asarray(subject, dtype=np.float64)
    center = (0.5 * (s[0] + s[2]), 0.5 * (s[1] + s[3]))
    return (
        coverage(s, views)
        - THIRDS_WEIGHT * thirds_distance(center, views)
        - TRUNCATION_WEIGHT * truncation_penalty(s, views)
    )


def _break_ties(scores: np.ndarray) -> np.ndarray:
    scores = scores.copy()
    while True:
        order = np.argsort(scores, kind="stable")
        dup = np.flatnonzero(np.diff(scores[order]) == 0)
        if dup.size == 0:
            return scores
        # nudge the later member of each tied pair; deterministic in index order
        scores[order[dup + 1]] += 1e-6


def render_image(rng: np.random.Generator, subject: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Smooth background plus a bright soft-edged elliptical blob over ``subject``."""
    h, w = size
    yy, xx = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    img = np.empty((3, h, w))
    for c in range(3):
        base = rng.uniform(0.15, 0.35)
        field = np.zeros((h, w))
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 2.5, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            field += np.cos(2 * np.pi * (fx * xx + fy * yy) + phase)
        img[c] = base + 0.04 * field
    cx, cy = 0.5 * (subject[0] + subject[2]), 0.5 * (subject[1] + subject[3])
    rx, ry = 0.5 * (subject[2] - subject[0]), 0.5 * (subject[3] - subject[1])
    r = np.hypot((xx - cx) / rx, (yy - cy) / ry)
    edge = 1.5 / min(h, w) / min(rx, ry)
    blob = np.clip((1.0 - r) / edge + 0.5, 0.0, 1.0)
    color = rng.uniform(0.45, 0.6, size=3)
    img += color[:, None, None] * blob[None]
    return np.clip(img, 0.0, 1.0)


def sample_views(rng: np.random.Generator, subject: np.ndarray, n: int, near_fraction: float = 0.75) -> np.ndarray:
    """Candidate windows: most placed so the subject centre lands at a random
    relative position inside the view, the rest anywhere in the image."""
    ratios = [parse_ratio(r) for r in DEFAULT_RATIOS]
    cx, cy = 0.5 * (subject[0] + subject[2]), 0.5 * (subject[1] + subject[3])
    out = np.empty((n, 4))
    for i in range(n):
        scale = rng.uniform(0.45, 0.9)
        ratio = ratios[rng.integers(len(ratios))]
        vw = min(1.0, scale * np.sqrt(ratio))
        vh = min(1.0, scale / np.sqrt(ratio))
        if rng.random() < near_fraction:
            u, t = rng.uniform(0.15, 0.85, size=2)
            x0, y0 = cx - u * vw, cy - t * vh
        else:
            x0, y0 = rng.uniform(0, 1 - vw), rng.uniform(0, 1 - vh)
        x0 = float(np.clip(x0, 0.0, 1.0 - vw))
        y0 = float(np.clip(y0, 0.0, 1.0 - vh))
        out[i] = (x0, y0, x0 + vw, y0 + vh)
    return out


def synth_generate(seed: int, n_images: int, n_views: int = 24, size: Tuple[int, int] = (64, 64)) -> List[Tuple[SynthImage, ViewList]]:
    """Deterministic dataset of ``n_images`` (image, view list) pairs.

    Image ``i`` draws from its own stream keyed by ``(seed, i)``, so datasets
    built from different seeds are disjoint and a prefix of a larger dataset
    equals the smaller one.
    """
    if n_views < 2:
        raise ValueError(f"n_views must be >= 2, got {n_views}")
    data = []
    for i in range(n_images):
        rng = np.random.default_rng([seed, i])
        sw, sh = rng.uniform(0.12, 0.28, size=2)
        x0 = rng.uniform(SUBJECT_MARGIN, 1 - SUBJECT_MARGIN - sw)
        y0 = rng.uniform(SUBJECT_MARGIN, 1 - SUBJECT_MARGIN - sh)
        subject = np.array([x0, y0, x0 + sw, y0 + sh])
        image = render_image(rng, subject, size)
        views = sample_views(rng, subject, n_views)
        gt = _break_ties(composition_score(subject, views))
        data.append((SynthImage(image, Box(*subject), seed), ViewList(i, views, gt)))
    return data
