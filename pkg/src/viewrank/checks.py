"""Seeded finite-difference checks of every analytic gradient in the library.

Each check builds a small random instance from ``seed``, wraps the forward
computation as a scalar function and compares the hand-written backward pass
with central differences via :func:`viewrank.tensor.finite_diff_check`.  The
command line ``gradcheck`` subcommand and the acceptance suite both call
:func:`run_gradcheck`.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .ranking import listwise_ce_loss, pairwise_hinge_loss, pairwise_list_loss, select_pairs
from .roi import KINDS, RoIConfig, roi_backward, roi_forward
from .tensor import GradCheckReport, bilinear_sample, bilinear_sample_backward, finite_diff_check

__all__ = ["TARGETS", "LOSS_TARGETS", "parse_target", "run_gradcheck", "random_boxes"]

LOSS_TARGETS = ("listwise", "hinge", "pairwise")
TARGETS = ("bilinear", *(f"roi:{k}" for k in KINDS), *(f"loss:{k}" for k in LOSS_TARGETS), "model")
# Loss gradients are checked at 1e-6 relative, and entries of P_Z - P_Y can
# nearly cancel (~1e-5).  A 3-point difference carries ~1e-10 of roundoff at
# step 1e-6, too much for those entries; the 5-point stencil at step 1e-3 has
# both truncation and roundoff near 1e-13.
_LOSS_FD = dict(step=1e-3, stencil=5)
# hinge kinks are kept further than the stencil's reach (2 * step)
_KINK_GAP = 1e-2


def parse_target(target: str) -> Tuple[str, str]:
    """``"roi:refine"`` -> ``("roi", "refine")``; raises ValueError if unknown."""
    if target not in TARGETS:
        raise ValueError(f"unknown gradcheck target {target!r}; expected one of {', '.join(TARGETS)}")
    group, _, kind = target.partition(":")
    return group, kind


def random_boxes(rng: np.random.Generator, n: int, min_side: float = 0.2) -> np.ndarray:
    """``n`` normalized boxes with both sides at least ``min_side``."""
    w = rng.uniform(min_side, 1.0, size=n)
    h = rng.uniform(min_side, 1.0, size=n)
    x0 = rng.uniform(0.0, 1.0 - w)
    y0 = rng.uniform(0.0, 1.0 - h)
    return np.stack([x0, y0, x0 + w, y0 + h], axis=1)


def _check_bilinear(rng, tol):
    fmap = rng.normal(size=(2, 5, 6))
    pts = [(int(rng.integers(2)), rng.uniform(0, 5), rng.uniform(0, 4)) for _ in range(6)]
    weights = rng.normal(size=len(pts))

    def f(m):
        return sum(w * bilinear_sample(m, c, x, y) for w, (c, x, y) in zip(weights, pts))

    grad = np.zeros(fmap.shape)
    for w, (c, x, y) in zip(weights, pts):
        bilinear_sample_backward(fmap.shape, c, x, y, w, out=grad)
    return finite_diff_check(f, fmap, grad, step=1e-4, tol=tol)


def _check_roi(rng, kind, tol):
    cfg = RoIConfig(kind, output_size=3)
    fmap = rng.normal(size=(2, 8, 9))
    boxes = random_boxes(rng, 3)
    g = rng.normal(size=(len(boxes), 2, 3, 3))
    # the sum of g-weighted outputs is the scalar whose map gradient backward returns
    analytic = roi_backward(fmap.shape, boxes, cfg, g, feature_map=fmap)
    return finite_diff_check(lambda m: float(np.sum(g * roi_forward(m, boxes, cfg))), fmap, analytic, tol=tol)


def _check_loss(rng, kind, tol):
    if kind == "listwise":
        gt = rng.normal(size=24)
        pred = rng.normal(size=24)
        res = listwise_ce_loss(pred, gt)
        return finite_diff_check(lambda p: listwise_ce_loss(p, gt).value, pred, res.grad, tol=tol, **_LOSS_FD)
    if kind == "hinge":
        # keep the hinge away from its kink so central differences are exact
        while True:
            s = rng.normal(size=2)
            if abs(1.0 + s[1] - s[0]) > _KINK_GAP:
                break
        res = pairwise_hinge_loss(s[0], s[1])
        return finite_diff_check(lambda v: pairwise_hinge_loss(v[0], v[1]).value, s, res.grad, tol=tol, **_LOSS_FD)
    gt = rng.normal(size=12)
    pairs = select_pairs(gt, "all")
    while True:
        pred = rng.normal(size=12)
        idx = np.asarray(pairs)
        if np.min(np.abs(1.0 + pred[idx[:, 1]] - pred[idx[:, 0]])) > _KINK_GAP:
            break
    res = pairwise_list_loss(pred, pairs)
    return finite_diff_check(lambda p: pairwise_list_loss(p, pairs).value, pred, res.grad, tol=tol, **_LOSS_FD)


def _check_model(seed, tol, loss_kind=None, roi_kind=None, max_entries=6):
    # imported here: the toy package depends on this module's siblings only
    from .toy.model import ROI_KINDS, ViewScorer, init_params
    from .toy.synth import synth_generate
    from .toy.train import LOSS_KINDS, TrainConfig, list_loss

    loss_kind = loss_kind or LOSS_KINDS[seed % len(LOSS_KINDS)]
    roi_kind = roi_kind or ROI_KINDS[(seed // len(LOSS_KINDS)) % len(ROI_KINDS)]
    cfg = TrainConfig(loss_kind=loss_kind, roi_kind=roi_kind, roi_size=3, pair_threshold=0.05)
    # He-initialized FC layers keep gradients well above the absolute floor
    params = init_params(seed, roi_size=3, fc_sizes=(6, 4), fc_init="he")
    image, views = synth_generate(seed, 1, n_views=4, size=(16, 16))[0]

    def loss_of(p):
        scorer = ViewScorer(p, roi_kind)
        pred = scorer.forward([image.image], [views.views])[0]
        return scorer, list_loss(cfg, pred, views.gt_scores)

    scorer, res = loss_of(params)
    grads = scorer.backward([res.grad])
    reports = []
    for i, name in enumerate(params):
        def f(v, name=name):
            p = dict(params)
            p[name] = v
            return loss_of(p)[1].value

        rep = finite_diff_check(f, params[name], grads[name], tol=tol, max_entries=max_entries, seed=seed * 31 + i)
        rep.message = f"{loss_kind}/{roi_kind} {name}"
        reports.append(rep)
    worst = max(reports, key=lambda r: (not r.passed, r.max_rel_err))
    total = sum(r.n_checked for r in reports)
    return GradCheckReport(all(reports), worst.max_abs_err, worst.max_rel_err, worst.worst_index, total, worst.message)


def run_gradcheck(target: str, seed: int = 0, tol: float = 1e-3) -> GradCheckReport:
    """Finite-difference check of ``target`` (see :data:`TARGETS`) on a seeded instance."""
    group, kind = parse_target(target)
    rng = np.random.default_rng(seed)
    if group == "bilinear":
        return _check_bilinear(rng, tol)
    if group == "roi":
        return _check_roi(rng, kind, tol)
    if group == "loss":
        return _check_loss(rng, kind, tol)
    return _check_model(seed, tol)
