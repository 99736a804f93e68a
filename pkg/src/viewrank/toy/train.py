"""SGD-with-momentum training, evaluation and ablation runs for the toy model."""

from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..ranking import listwise_ce_loss, pairwise_list_loss, ranks_to_scores, select_pairs, spearman
from ..views import iou, pick_best_view
from .model import ROI_KINDS, ViewScorer, init_params
from .synth import SynthImage, ViewList, synth_generate

__all__ = [
    "LOSS_KINDS",
    "TrainConfig",
    "TrainResult",
    "list_loss",
    "batch_loss_and_grads",
    "train",
    "eval_rank_quality",
    "run_ablation",
    "write_table",
    "write_log",
    "make_splits",
    "predict",
    "TABLE_FIELDS",
]

log = logging.getLogger(__name__)

LOSS_KINDS = ("listwise", "pairwise_all", "pairwise_threshold", "pairwise_adjacent")


@dataclass
class TrainConfig:
    """Toy training recipe.

    The optimizer schedule (10 epochs, momentum 0.9, x0.1 decay after epoch 4,
    8 lists per step) follows the reference recipe.  ``learning_rate``,
    ``fc_init`` and ``gt_scale`` default to values that make the scaled-down
    network learn; ``fc_init="normal"`` with ``learning_rate=0.001`` gives the
    original N(0, 0.01) setting.  ``gt_scale`` is the step between consecutive
    rank-order target scores of the listwise loss, and ``pair_threshold`` is
    the minimum ground-truth gap of a ``pairwise_threshold`` pair.
    """

    epochs: int = 10
    learning_rate: float = 0.01
    lr_decay: float = 0.1
    lr_decay_epoch: int = 4
    momentum: float = 0.9
    batch_lists: int = 8
    rng_seed: int = 0
    loss_kind: str = "listwise"
    pair_threshold: float = 0.25
    roi_kind: str = "refine"
    roi_size: int = 7
    gt_scale: float = 0.25
    fc_init: str = "he"
    n_train: int = 256
    n_val: int = 64
    n_views: int = 24
    image_size: int = 64
    data_seed: int = 1

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind: unknown value {self.loss_kind!r}; expected one of {LOSS_KINDS}")
        if self.roi_kind not in ROI_KINDS:
            raise ValueError(f"roi_kind: unknown value {self.roi_kind!r}; expected one of {ROI_KINDS}")
        for name in ("epochs", "lr_decay_epoch"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name}: must be >= 0")
        for name in ("learning_rate", "batch_lists", "roi_size", "n_train", "n_val", "image_size", "gt_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name}: must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum: must lie in [0, 1)")
        if self.fc_init not in ("normal", "he"):
            raise ValueError(f"fc_init: expected 'normal' or 'he', got {self.fc_init!r}")
        if self.n_views < 2:
            raise ValueError("n_views: must be >= 2")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"{unknown[0]}: unknown config field")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def label(self) -> str:
        return f"{self.loss_kind}/{self.roi_kind}"


@dataclass
class TrainResult:
    params: Dict[str, np.ndarray]
    log: List[dict] = field(default_factory=list)
    best_epoch: int = 0


# dataset split seeds: train, validation and test never share an image stream
def make_splits(cfg: TrainConfig, n_test: int = 0):
    size = (cfg.image_size, cfg.image_size)
    train = synth_generate(cfg.data_seed, cfg.n_train, cfg.n_views, size)
    val = synth_generate(cfg.data_seed + 10_000, cfg.n_val, cfg.n_views, size)
    if n_test:
        test = synth_generate(cfg.data_seed + 20_000, n_test, cfg.n_views, size)
        return train, val, test
    return train, val


def list_loss(cfg: TrainConfig, pred: np.ndarray, gt: np.ndarray):
    """Loss and d(loss)/d(pred) for one view list."""
    if cfg.loss_kind == "listwise":
        return listwise_ce_loss(pred, ranks_to_scores(gt, cfg.gt_scale))
    mode = cfg.loss_kind.split("_", 1)[1]
    return pairwise_list_loss(pred, select_pairs(gt, mode, cfg.pair_threshold))


def batch_loss_and_grads(params, cfg: TrainConfig, batch: Sequence[Tuple[SynthImage, ViewList]]):
    """Mean loss over the lists of ``batch`` and its parameter gradients."""
    scorer = ViewScorer(params, cfg.roi_kind)
    preds = scorer.forward([s.image for s, _ in batch], [v.views for _, v in batch])
    m = len(batch)
    total = 0.0
    dscores = []
    for pred, (_, vl) in zip(preds, batch):
        res = list_loss(cfg, pred, vl.gt_scores)
        total += res.value
        dscores.append(res.grad / m)
    return total / m, scorer.backward(dscores)


def predict(params, roi_kind: str, data, chunk: int = 16) -> List[np.ndarray]:
    scorer = ViewScorer(params, roi_kind)
    out = []
    for i in range(0, len(data), chunk):
        part = data[i:i + chunk]
        out.extend(scorer.forward([s.image for s, _ in part], [v.views for _, v in part]))
    return out


def eval_rank_quality(params, data, roi_kind: str = "refine", preds: Optional[List[np.ndarray]] = None) -> dict:
    """Mean Spearman, top-1 accuracy and IoU of the picked view vs the best view."""
    if preds is None:
        preds = predict(params, roi_kind, data)
    rho, hit, ious = [], [], []
    for pred, (_, vl) in zip(preds, data):
        rho.append(spearman(pred, vl.gt_scores))
        best = int(np.argmax(vl.gt_scores))
        picked = pick_best_view(vl.views, pred)
        hit.append(float(np.argmax(pred) == best))
        ious.append(iou(picked, vl.views[best]))
    return {
        "spearman": float(np.mean(rho)),
        "top1_accuracy": float(np.mean(hit)),
        "mean_iou_vs_oracle_best": float(np.mean(ious)),
    }


def train(cfg: TrainConfig, data=None, val=None, params=None) -> TrainResult:
    """Train with SGD + momentum; returns the best-validation checkpoint.

    ``data``/``val`` default to the synthetic splits described by ``cfg``.
    The learning rate is multiplied by ``lr_decay`` once ``lr_decay_epoch``
    epochs have finished.
    """
    if data is None or val is None:
        gen_train, gen_val = make_splits(cfg)
        data = gen_train if data is None else data
        val = gen_val if val is None else val
    if len(data) == 0:
        raise ValueError("training data is empty")
    if params is None:
        params = init_params(cfg.rng_seed, roi_size=cfg.roi_size, fc_init=cfg.fc_init)
    params = copy.deepcopy(params)
    result = TrainResult(copy.deepcopy(params))
    if cfg.epochs == 0:
        return result

    rng = np.random.default_rng(cfg.rng_seed)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    best = -np.inf
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate * (cfg.lr_decay if epoch > cfg.lr_decay_epoch else 1.0)
        order = rng.permutation(len(data))
        losses = []
        for i in range(0, len(order), cfg.batch_lists):
            batch = [data[j] for j in order[i:i + cfg.batch_lists]]
            loss, grads = batch_loss_and_grads(params, cfg, batch)
            for k in params:
                velocity[k] = cfg.momentum * velocity[k] + grads[k]
                params[k] -= lr * velocity[k]
            losses.append(loss)
            step += 1
        val_rho = eval_rank_quality(params, val, cfg.roi_kind)["spearman"]
        row = {"epoch": epoch, "step": step, "loss": float(np.mean(losses)), "val_spearman": val_rho}
        result.log.append(row)
        log.info("%s epoch %d loss %.5f val_spearman %.4f", cfg.label, epoch, row["loss"], val_rho)
        if val_rho > best:
            best = val_rho
            result.params = copy.deepcopy(params)
            result.best_epoch = epoch
    return result


def write_log(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "step", "loss", "val_spearman"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


TABLE_FIELDS = ["loss_kind", "roi_kind", "seed", "spearman", "top1_accuracy", "mean_iou_vs_oracle_best", "wall_clock"]


def run_ablation(matrix: Sequence[TrainConfig], n_test: int = 64) -> List[dict]:
    """Train and evaluate every config; one result row per config.

    Configs may differ only in ``loss_kind``, ``roi_kind`` and ``rng_seed``
    (the seed axis gives repeated runs); everything else must match so the
    rows are comparable.
    """
    matrix = list(matrix)
    if not matrix:
        return []
    ref = matrix[0].to_dict()
    free = {"loss_kind", "roi_kind", "rng_seed"}
    for cfg in matrix[1:]:
        diff = {k for k, v in cfg.to_dict().items() if ref[k] != v} - free
        if diff:
            raise ValueError(f"ablation configs differ in {sorted(diff)}")
    train_set, val_set, test_set = make_splits(matrix[0], n_test)
    rows = []
    for cfg in matrix:
        t0 = time.perf_counter()
        res = train(cfg, train_set, val_set)
        report = eval_rank_quality(res.params, test_set, cfg.roi_kind)
        rows.append({
            "loss_kind": cfg.loss_kind,
            "roi_kind": cfg.roi_kind,
            "seed": cfg.rng_seed,
            **report,
            "wall_clock": time.perf_counter() - t0,
        })
    return rows


def write_table(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in TABLE_FIELDS})
