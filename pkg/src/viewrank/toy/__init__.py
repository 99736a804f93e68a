"""Desk-scale training and evaluation of the view-ranking model on synthetic data."""

from .model import ROI_KINDS, ViewScorer, forward_score, init_params
from .synth import SynthImage, ViewList, composition_score, synth_generate
from .train import LOSS_KINDS, TrainConfig, TrainResult, eval_rank_quality, run_ablation, train

__all__ = [
    "ROI_KINDS",
    "LOSS_KINDS",
    "ViewScorer",
    "forward_score",
    "init_params",
    "SynthImage",
    "ViewList",
    "composition_score",
    "synth_generate",
    "TrainConfig",
    "TrainResult",
    "eval_rank_quality",
    "run_ablation",
    "train",
]
