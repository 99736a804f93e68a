"""Command-line entry point: ``python -m viewrank <command> ...``.

Exit codes are a stable contract: 0 on success, 1 when a check fails or a
runtime/data error occurs, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import io as vio
from .checks import TARGETS, random_boxes, run_gradcheck
from .roi import KINDS, RoIConfig, RoISampler
from .views import SlidingWindowConfig, boundary_displacement, generate_windows, iou, top1_max_iou

CONFIG_DIR = Path(__file__).resolve().parent / "configs"
PRESETS = ("344", "919", "1745")
CHECKPOINT_NAME = "checkpoint.crtn"
MANIFEST_NAME = "manifest.json"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 2."""


class DataError(Exception):
    """Inputs parse but are inconsistent; maps to exit code 1."""


def preset_path(name: str) -> Path:
    return CONFIG_DIR / f"candidates_{name}.json"


def _load_json(path, what: str):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path}: invalid JSON: {exc}") from exc


# -- gradcheck ---------------------------------------------------------------
def cmd_gradcheck(args) -> int:
    report = run_gradcheck(args.target, seed=args.seed, tol=args.tol)
    print(f"{args.target} seed={args.seed} tol={args.tol:g}")
    print(f"max abs err {report.max_abs_err:.3e}")
    print(f"max rel err {report.max_rel_err:.3e}")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_FAIL


# -- gen-views ---------------------------------------------------------------
def window_config_from_args(args) -> SlidingWindowConfig:
    data = {}
    if args.preset:
        data.update(_load_json(preset_path(args.preset), "preset"))
    if args.config:
        data.update(_load_json(args.config, "config"))
    overrides = {
        "scales": args.scales,
        "aspect_ratios": args.ratios,
        "stride": args.stride,
        "nms_iou_threshold": args.nms,
        "min_coverage": args.min_coverage,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {k: data[k] for k in ("scales", "aspect_ratios", "stride", "nms_iou_threshold", "min_coverage") if k in data}
    try:
        return SlidingWindowConfig(**known)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"window config: {exc}") from exc


def cmd_gen_views(args) -> int:
    boxes = generate_windows(window_config_from_args(args))
    if args.out:
        vio.write_boxes(args.out, boxes)
    print(len(boxes))
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------
def cmd_evaluate(args) -> int:
    pred = {a.image_id: a for a in vio.read_annotations(args.pred)}
    gt = {a.image_id: a for a in vio.read_annotations(args.gt)}
    missing = sorted(set(gt) - set(pred))
    extra = sorted(set(pred) - set(gt))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"no prediction for: {', '.join(missing)}")
        if extra:
            parts.append(f"no ground truth for: {', '.join(extra)}")
        raise DataError("image_id mismatch; " + "; ".join(parts))
    values = []
    for image_id in gt:
        p = pred[image_id].gt_boxes[0]
        if args.metric == "iou":
            v = iou(p, gt[image_id].gt_boxes[0])
        elif args.metric == "disp":
            v = boundary_displacement(p, gt[image_id].gt_boxes[0])
        else:
            v = top1_max_iou(p, gt[image_id])
        values.append(v)
        print(f"{image_id}\t{v:.6f}")
    mean = float(np.mean(values)) if values else float("nan")
    print(f"mean {args.metric}\t{mean:.6f}")
    return EXIT_OK


# -- bench-roi ---------------------------------------------------------------
def cmd_bench_roi(args) -> int:
    if args.channels < 1 or args.size < 2 or args.boxes < 0 or args.iters < 1:
        raise UsageError("need --channels >= 1, --size >= 2, --boxes >= 0, --iters >= 1")
    rng = np.random.default_rng(args.seed)
    fmap = rng.normal(size=(args.channels, args.size, args.size))
    boxes = random_boxes(rng, args.boxes, min_side=0.3)
    sampler = RoISampler(RoIConfig(args.kind, output_size=args.output_size))
    out = np.zeros((0,))
    t0 = time.perf_counter()
    for _ in range(args.iters):
        out = sampler.forward(fmap, boxes)
    wall = time.perf_counter() - t0
    total = args.boxes * args.iters
    rate = total / wall if wall > 0 and total else 0.0
    digest = hashlib.sha256(np.ascontiguousarray(out).tobytes()).hexdigest()[:16]
    print(f"kind {args.kind} channels {args.channels} size {args.size} boxes {args.boxes} iters {args.iters}")
    print(f"wall {wall:.4f} s")
    print(f"boxes/s {rate:.1f}")
    print(f"checksum {digest}")
    return EXIT_OK


# -- training ----------------------------------------------------------------
def _train_config(data: dict, where: str):
    from .toy.train import TrainConfig

    if not isinstance(data, dict):
        raise UsageError(f"config error: {where}: expected a JSON object")
    try:
        return TrainConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config error: {where}.{exc}") from exc


def save_checkpoint(out_dir: Path, params, manifest: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / CHECKPOINT_NAME
    vio.write_tensors(path, params)
    manifest = dict(manifest)
    manifest["checkpoint"] = CHECKPOINT_NAME
    manifest["tensors"] = {k: list(np.shape(v)) for k, v in params.items()}
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    return path


def cmd_train_toy(args) -> int:
    from .toy.train import eval_rank_quality, make_splits, train, write_log

    data = _load_json(args.config, "config") if args.config else {}
    cfg = _train_config(data, "config")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set, val_set, test_set = make_splits(cfg, args.n_test)
    t0 = time.perf_counter()
    result = train(cfg, train_set, val_set)
    wall = time.perf_counter() - t0
    write_log(out_dir / "log.csv", result.log)
    val = eval_rank_quality(result.params, val_set, cfg.roi_kind)
    test = eval_rank_quality(result.params, test_set, cfg.roi_kind)
    save_checkpoint(out_dir, result.params, {
        "roi_kind": cfg.roi_kind,
        "config": cfg.to_dict(),
        "best_epoch": result.best_epoch,
        "val": val,
        "test": test,
        "wall_clock": wall,
    })
    print(f"best epoch {result.best_epoch}")
    print(f"val spearman {val['spearman']:.4f}")
    print(f"test spearman {test['spearman']:.4f} top1 {test['top1_accuracy']:.4f} "
          f"iou {test['mean_iou_vs_oracle_best']:.4f}")
    print(f"wrote {out_dir}")
    return EXIT_OK


def expand_matrix(plan: dict) -> list:
    """``{"base": {...}, "loss_kinds": [...], "roi_kinds": [...], "seeds": [...]}`` -> configs."""
    if not isinstance(plan, dict):
        raise UsageError("config error: matrix: expected a JSON object")
    unknown = sorted(set(plan) - {"base", "loss_kinds", "roi_kinds", "seeds", "n_test"})
    if unknown:
        raise UsageError(f"config error: matrix.{unknown[0]}: unknown field")
    base = dict(plan.get("base", {}))
    _train_config(base, "matrix.base")
    out = []
    for loss, roi, seed in itertools.product(
        plan.get("loss_kinds", [base.get("loss_kind", "listwise")]),
        plan.get("roi_kinds", [base.get("roi_kind", "refine")]),
        plan.get("seeds", [base.get("rng_seed", 0)]),
    ):
        out.append(_train_config({**base, "loss_kind": loss, "roi_kind": roi, "rng_seed": seed}, "matrix"))
    return out


def cmd_ablation(args) -> int:
    from .toy.train import TABLE_FIELDS, run_ablation, write_table

    plan = _load_json(args.matrix, "matrix")
    matrix = expand_matrix(plan)
    rows = run_ablation(matrix, n_test=int(plan.get("n_test", args.n_test)))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_table(out_dir / "ablation.csv", rows)
    print("\t".join(TABLE_FIELDS))
    for row in rows:
        print("\t".join(f"{row[k]:.4f}" if isinstance(row[k], float) else str(row[k]) for k in TABLE_FIELDS))
    print(f"wrote {out_dir / 'ablation.csv'}")
    return EXIT_OK


# -- rank --------------------------------------------------------------------
def load_checkpoint(path, roi_kind: Optional[str] = None):
    """Parameters and RoI kind of a checkpoint; the kind comes from the manifest
    next to it unless given explicitly (``refine`` if neither)."""
    params = vio.read_tensors(path)
    if roi_kind is None:
        manifest = Path(path).with_name(MANIFEST_NAME)
        roi_kind = "refine"
        if manifest.exists():
            roi_kind = json.loads(manifest.read_text()).get("roi_kind", roi_kind)
    return params, roi_kind


def cmd_rank(args) -> int:
    from .toy.model import ViewScorer

    image = vio.read_ppm(args.image)
    boxes = vio.read_boxes(args.candidates)
    if len(boxes) == 0:
        raise DataError(f"{args.candidates}: no candidate boxes")
    params, roi_kind = load_checkpoint(args.checkpoint, args.roi_kind)
    try:
        scorer = ViewScorer(params, roi_kind)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.checkpoint}: incompatible checkpoint: {exc}") from exc
    scores = scorer.forward([image], [boxes])[0]
    # stable sort on the negated score keeps the lowest index first among ties
    order = np.argsort(-scores, kind="stable")
    ranked = [{"box": boxes[i].tolist(), "score": float(scores[i])} for i in order]
    if args.out:
        Path(args.out).write_text(json.dumps(ranked, indent=1))
    print(json.dumps(ranked[0]["box"]))
    return EXIT_OK


# -- parser ------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viewrank", description="View-ranking toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of an analytic gradient")
    p.add_argument("target", choices=TARGETS, metavar="TARGET", help=f"one of: {', '.join(TARGETS)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-views", help="generate sliding-window candidate boxes")
    p.add_argument("--preset", choices=PRESETS, help="committed calibrated config")
    p.add_argument("--config", help="window config JSON (flags override it)")
    p.add_argument("--scales", type=float, nargs="+")
    p.add_argument("--ratios", nargs="+", help="aspect ratios such as 1:1 16:9")
    p.add_argument("--stride", type=float)
    p.add_argument("--nms", type=float, help="NMS IoU threshold (1 disables NMS)")
    p.add_argument("--min-coverage", type=float)
    p.add_argument("--out", help="write boxes JSON here")
    p.set_defaults(func=cmd_gen_views)

    p = sub.add_parser("evaluate", help="IoU / displacement / top-1 max IoU of predicted crops")
    p.add_argument("--pred", required=True, help="annotation JSON; the first box of each entry is the prediction")
    p.add_argument("--gt", required=True, help="annotation JSON")
    p.add_argument("--metric", choices=("iou", "disp", "top1maxiou"), default="iou")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench-roi", help="RoI kernel forward throughput")
    p.add_argument("--kind", choices=KINDS, default="refine")
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--size", type=int, default=28)
    p.add_argument("--boxes", type=int, default=1745)
    p.add_argument("--iters", type=int, default=1)
    p.add_argument("--output-size", type=int, default=14)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench_roi)

    p = sub.add_parser("train-toy", help="train the toy model on synthetic data")
    p.add_argument("--config", help="JSON object of training config fields (defaults otherwise)")
    p.add_argument("--out", default="runs/toy")
    p.add_argument("--n-test", type=int, default=64)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("ablation", help="train/evaluate a matrix of loss and RoI kinds")
    p.add_argument("--matrix", required=True, help="matrix JSON: base, loss_kinds, roi_kinds, seeds")
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--n-test", type=int, default=64)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("rank", help="score candidate views of a PPM image")
    p.add_argument("--image", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--roi-kind", choices=("none", *KINDS))
    p.add_argument("--out", help="write the ranked list JSON here")
    p.set_defaults(func=cmd_rank)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, vio.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL
