"""Listwise Top-1 ranking loss, the pairwise hinge baseline, and pair selection.

The Top-1 probability of item ``j`` under a Plackett-Luce permutation model
with ``phi = exp`` is the softmax of the scores.  :func:`permutation_oracle`
computes the same quantity the long way, by summing permutation
probabilities, and exists to cross-check :func:`top1_probability`.
"""

from __future__ import annotations

import itertools
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

__all__ = [
    "LossResult",
    "top1_probability",
    "log_top1_probability",
    "permutation_probability",
    "permutation_oracle",
    "entropy",
    "listwise_ce_loss",
    "listwise_ce_batch",
    "pairwise_hinge_loss",
    "select_pairs",
    "pairwise_list_loss",
    "rank_order_score",
    "ranks_to_scores",
    "spearman",
    "PAIR_MODES",
]

PAIR_MODES = ("all", "threshold", "adjacent")
MAX_ORACLE_ITEMS = 8


class LossResult(NamedTuple):
    value: float
    grad: np.ndarray


def _scores(s, min_len: int = 1) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    if s.size < min_len:
        raise ValueError(f"score list needs at least {min_len} entries, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s


def log_top1_probability(s) -> np.ndarray:
    """Log-softmax of ``s`` (max-shifted)."""
    s = _scores(s)
    z = s - s.max()
    return z - np.log(np.exp(z).sum())


def top1_probability(s) -> np.ndarray:
    """Probability that each item ranks first: ``exp(s_j) / sum_k exp(s_k)``."""
    s = _scores(s)
    e = np.exp(s - s.max())
    return e / e.sum()


def permutation_probability(s, perm: Sequence[int]) -> float:
    """Plackett-Luce probability of ranking ``perm`` given scores ``s``.

    ``perm[j]`` is the item placed at position ``j``.  Each factor divides by
    the mass of the items not yet placed.
    """
    s = _scores(s)
    ordered = s[list(perm)]
    z = ordered - s.max()
    # log of the suffix sums sum_{k >= j} exp(z_k)
    suffix = np.logaddexp.accumulate(z[::-1])[::-1]
    return float(np.exp(np.sum(z - suffix)))


def permutation_oracle(s) -> np.ndarray:
    """Top-1 probabilities by brute-force summation over all permutations."""
    s = _scores(s)
    n = s.size
    if n > MAX_ORACLE_ITEMS:
        raise ValueError(f"permutation oracle limited to n <= {MAX_ORACLE_ITEMS}, got {n}")
    # every ranking at once: row r holds permutation r, scored as in
    # permutation_probability, then each row's mass goes to its first item
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    z = s[perms] - s.max()
    suffix = np.logaddexp.accumulate(z[:, ::-1], axis=1)[:, ::-1]
    mass = np.exp(np.sum(z - suffix, axis=1))
    return np.bincount(perms[:, 0], weights=mass, minlength=n)


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def listwise_ce_loss(pred, gt) -> LossResult:
    """Cross entropy between the Top-1 distributions of ``gt`` and ``pred``.

    Returns the loss value and its gradient ``P_pred - P_gt`` w.r.t. ``pred``.
    """
    pred = _scores(pred, 2)
    gt = _scores(gt, 2)
    if pred.shape != gt.shape:
        raise ValueError(f"pred and gt lengths differ: {pred.size} vs {gt.size}")
    p_gt = top1_probability(gt)
    log_p_pred = log_top1_probability(pred)
    value = float(-np.dot(p_gt, log_p_pred))
    return LossResult(value, np.exp(log_p_pred) - p_gt)


def listwise_ce_batch(preds: Sequence, gts: Sequence) -> LossResult:
    """Mean listwise loss over several lists; ``grad`` is a list of arrays."""
    if len(preds) != len(gts) or not preds:
        raise ValueError("need equally many, non-zero, pred and gt lists")
    m = len(preds)
    total = 0.0
    grads = []
    for p, g in zip(preds, gts):
        res = listwise_ce_loss(p, g)
        total += res.value
        grads.append(res.grad / m)
    return LossResult(total / m, grads)


def pairwise_hinge_loss(s_better: float, s_worse: float, margin: float = 1.0) -> LossResult:
    """``max(0, margin + s_worse - s_better)``; grad is w.r.t. ``(s_better, s_worse)``.

    The preferred view has to outscore the other by ``margin``.
    """
    if not (np.isfinite(s_better) and np.isfinite(s_worse)):
        raise ValueError("scores must be finite")
    value = margin + float(s_worse) - float(s_better)
    if value > 0:
        return LossResult(value, np.array([-1.0, 1.0]))
    return LossResult(0.0, np.zeros(2))


def select_pairs(gt, mode: str = "all", threshold: float = 0.5) -> List[Tuple[int, int]]:
    """Training pairs ``(better, worse)`` from a ground-truth score list.

    ``all`` takes every pair with distinct scores; ``threshold`` drops pairs
    whose score gap is below ``threshold``; ``adjacent`` keeps only pairs that
    are neighbours in the ground-truth ranking.
    """
    gt = _scores(gt, 2)
    if mode not in PAIR_MODES:
        raise ValueError(f"unknown pair mode {mode!r}; expected one of {PAIR_MODES}")
    if mode == "adjacent":
        order = np.argsort(-gt, kind="stable")
        return [(int(a), int(b)) for a, b in zip(order[:-1], order[1:]) if gt[a] > gt[b]]
    pairs = []
    for i, j in itertools.combinations(range(gt.size), 2):
        if gt[i] == gt[j]:
            continue
        better, worse = (i, j) if gt[i] > gt[j] else (j, i)
        if mode == "threshold" and gt[better] - gt[worse] < threshold:
            continue
        pairs.append((better, worse))
    return pairs


def pairwise_list_loss(pred, pairs: Sequence[Tuple[int, int]], margin: float = 1.0) -> LossResult:
    """Mean hinge loss over ``pairs``; gradient w.r.t. every entry of ``pred``."""
    pred = _scores(pred)
    grad = np.zeros_like(pred)
    if not pairs:
        return LossResult(0.0, grad)
    idx = np.asarray(pairs, dtype=np.intp)
    better, worse = idx[:, 0], idx[:, 1]
    viol = margin + pred[worse] - pred[better]
    active = viol > 0
    n = len(pairs)
    np.add.at(grad, better[active], -1.0 / n)
    np.add.at(grad, worse[active], 1.0 / n)
    return LossResult(float(np.sum(viol[active]) / n), grad)


def rank_order_score(n: int, scale: float = 1.0) -> np.ndarray:
    """Ground-truth scores for a best-first list: rank ``r`` gets ``scale * (n - r)``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return scale * np.arange(n - 1, -1, -1, dtype=np.float64)


def ranks_to_scores(gt, scale: float = 1.0) -> np.ndarray:
    """Replace each value of ``gt`` by the rank-order score of its position."""
    gt = _scores(gt)
    order = np.argsort(-gt, kind="stable")
    out = np.empty_like(gt)
    out[order] = rank_order_score(gt.size, scale)
    return out


def spearman(a, b) -> float:
    """Spearman rank correlation of two score lists (average ranks for ties).

    A constant list has no ranking; the correlation is reported as 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    return float(spearmanr(a, b).statistic)

