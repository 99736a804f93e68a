import csv

import numpy as np
import pytest

from viewrank.checks import run_gradcheck
from viewrank.ranking import entropy, ranks_to_scores, top1_probability
from viewrank.toy.model import ROI_KINDS, ViewScorer, crop_and_warp, forward_score, init_params
from viewrank.toy.synth import (
    SUBJECT_MARGIN,
    composition_score,
    coverage,
    synth_generate,
    truncation_penalty,
)
from viewrank.toy.train import (
    LOSS_KINDS,
    TrainConfig,
    batch_loss_and_grads,
    eval_rank_quality,
    run_ablation,
    train,
    write_log,
    write_table,
)

TINY = dict(epochs=2, n_train=16, n_val=8, n_views=6, image_size=32, batch_lists=4)


def test_synth_is_deterministic():
    a = synth_generate(3, 4)
    b = synth_generate(3, 4)
    for (ia, va), (ib, vb) in zip(a, b):
        assert ia.image.tobytes() == ib.image.tobytes()
        assert va.views.tobytes() == vb.views.tobytes()
        assert va.gt_scores.tobytes() == vb.gt_scores.tobytes()


def test_synth_prefix_and_seed_separation():
    small, big = synth_generate(3, 2), synth_generate(3, 5)
    assert small[1][0].image.tobytes() == big[1][0].image.tobytes()
    assert synth_generate(4, 1)[0][0].image.tobytes() != small[0][0].image.tobytes()


def test_synth_invariants():
    for img, vl in synth_generate(0, 20, n_views=24, size=(40, 48)):
        assert img.image.shape == (3, 40, 48)
        assert 0 <= img.image.min() and img.image.max() <= 1
        s = img.subject_box
        assert min(s.x0, s.y0, 1 - s.x1, 1 - s.y1) >= SUBJECT_MARGIN - 1e-12
        assert vl.views.shape == (24, 4) and vl.gt_scores.shape == (24,)
        assert len(np.unique(vl.gt_scores)) == 24


def test_synth_needs_two_views():
    with pytest.raises(ValueError):
        synth_generate(0, 1, n_views=1)


def test_oracle_best_and_worst_views():
    subject = np.array([0.3, 0.3, 0.4, 0.4])
    cx = cy = 0.35
    # a 0.6-wide view placing the subject centre on its upper-left thirds point
    good = [cx - 0.2, cy - 0.2, cx + 0.4, cy + 0.4]
    disjoint = [0.6, 0.6, 0.95, 0.95]
    views = np.array([good, [0.0, 0.0, 0.5, 0.5], [0.2, 0.0, 0.9, 0.9], disjoint, [0.32, 0.3, 0.8, 0.7]])
    scores = composition_score(subject, views)
    assert np.argmax(scores) == 0
    assert coverage(subject, views)[3] == 0.0
    assert truncation_penalty(subject, views)[3] == 1.0
    assert np.argmin(scores) == 3


def test_init_params_shapes():
    p = init_params(0)
    assert p["conv1.w"].shape == (8, 3, 3, 3)
    assert p["conv2.w"].shape == (16, 8, 3, 3)
    assert p["conv3.w"].shape == (16, 16, 3, 3)
    assert p["fc1.w"].shape == (16 * 7 * 7, 64)
    assert p["fc2.w"].shape == (64, 32)
    assert p["fc3.w"].shape == (32, 1)
    assert all(not p[k].any() for k in p if k.endswith(".b"))
    assert np.std(p["fc2.w"]) == pytest.approx(0.01, rel=0.1)
    assert np.std(init_params(0, fc_init="he")["fc2.w"]) == pytest.approx(np.sqrt(2 / 64), rel=0.1)
    with pytest.raises(ValueError):
        init_params(0, fc_init="xavier")


@pytest.mark.parametrize("kind", ROI_KINDS)
def test_zero_weights_give_uniform_scores(kind):
    p = {k: np.zeros_like(v) for k, v in init_params(0).items()}
    img, vl = synth_generate(0, 1)[0]
    s = forward_score(p, img.image, vl.views, kind)
    assert (s == 0).all()
    np.testing.assert_allclose(top1_probability(s), 1 / len(s))


@pytest.mark.parametrize("kind", ROI_KINDS)
def test_view_permutation_permutes_scores(kind):
    p = init_params(1, fc_init="he")
    img, vl = synth_generate(1, 1)[0]
    perm = np.random.default_rng(0).permutation(len(vl.views))
    a = forward_score(p, img.image, vl.views, kind)
    b = forward_score(p, img.image, vl.views[perm], kind)
    np.testing.assert_allclose(b, a[perm], rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("loss_kind", LOSS_KINDS)
@pytest.mark.parametrize("roi_kind", ROI_KINDS)
def test_end_to_end_gradients(loss_kind, roi_kind):
    from viewrank.checks import _check_model

    rep = _check_model(11, 1e-3, loss_kind, roi_kind)
    assert rep.passed, rep.summary()


def test_gradcheck_model_target():
    assert run_gradcheck("model", seed=2)


def test_crop_and_warp_identity_box():
    img = np.random.default_rng(0).normal(size=(3, 5, 5))
    out = crop_and_warp(img, np.array([[0.0, 0.0, 1.0, 1.0]]), 5)
    np.testing.assert_allclose(out[0], img, atol=1e-12)


def test_scorer_shape_errors():
    p = init_params(0)
    img, vl = synth_generate(0, 1)[0]
    scorer = ViewScorer(p, "refine")
    with pytest.raises(ValueError):
        scorer.forward([img.image], [])
    with pytest.raises(ValueError):
        scorer.forward([img.image[:2]], [vl.views])
    with pytest.raises(RuntimeError):
        ViewScorer(p).backward([np.zeros(3)])
    with pytest.raises(ValueError):
        ViewScorer(p, "bogus")


def test_eval_perfect_and_constant_predictions():
    data = synth_generate(5, 12)
    perfect = eval_rank_quality(None, data, preds=[vl.gt_scores for _, vl in data])
    assert perfect["spearman"] == pytest.approx(1.0, abs=1e-12)
    assert perfect["top1_accuracy"] == 1.0 and perfect["mean_iou_vs_oracle_best"] == 1.0
    const = eval_rank_quality(None, data, preds=[np.zeros(len(vl.views)) for _, vl in data])
    expected = np.mean([np.argmax(vl.gt_scores) == 0 for _, vl in data])
    assert const["top1_accuracy"] == expected


def test_output_bias_shift_changes_no_metric():
    cfg = TrainConfig(**TINY)
    data = synth_generate(9, 8, n_views=6, size=(32, 32))
    p = init_params(0, fc_init="he")
    q = dict(p)
    q["fc3.b"] = p["fc3.b"] + 7.5
    assert eval_rank_quality(p, data, cfg.roi_kind) == eval_rank_quality(q, data, cfg.roi_kind)


def test_train_zero_epochs_returns_init():
    cfg = TrainConfig(**{**TINY, "epochs": 0})
    res = train(cfg)
    init = init_params(cfg.rng_seed, roi_size=cfg.roi_size, fc_init=cfg.fc_init)
    assert res.log == [] and res.best_epoch == 0
    for k in init:
        np.testing.assert_array_equal(res.params[k], init[k])


def test_train_is_deterministic_and_logs():
    cfg = TrainConfig(**TINY)
    a, b = train(cfg), train(cfg)
    assert a.log == b.log
    assert [r["epoch"] for r in a.log] == [1, 2]
    assert a.log[-1]["step"] == 2 * 4
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


def test_batch_loss_not_below_entropy():
    cfg = TrainConfig(**TINY)
    data = synth_generate(2, 4, n_views=6, size=(32, 32))
    loss, _ = batch_loss_and_grads(init_params(0, fc_init="he"), cfg, data)
    floor = np.mean([entropy(top1_probability(ranks_to_scores(vl.gt_scores, cfg.gt_scale))) for _, vl in data])
    assert loss >= floor


def test_train_rejects_empty_data():
    cfg = TrainConfig(**TINY)
    with pytest.raises(ValueError):
        train(cfg, data=[], val=synth_generate(0, 2))


@pytest.mark.parametrize("bad", [
    {"loss_kind": "listnet"},
    {"roi_kind": "crop"},
    {"epochs": -1},
    {"learning_rate": 0},
    {"momentum": 1.0},
    {"n_views": 1},
    {"fc_init": "zeros"},
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_config_from_dict_names_unknown_field():
    with pytest.raises(ValueError, match="learning_rat"):
        TrainConfig.from_dict({"learning_rat": 0.1})
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


def test_ablation_single_row_and_validation(tmp_path):
    cfg = TrainConfig(**{**TINY, "epochs": 1})
    rows = run_ablation([cfg], n_test=4)
    assert len(rows) == 1 and rows[0]["loss_kind"] == "listwise"
    write_table(tmp_path / "t.csv", rows)
    with open(tmp_path / "t.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 1
    with pytest.raises(ValueError, match="epochs"):
        run_ablation([cfg, TrainConfig(**{**TINY, "epochs": 3})])


def test_write_log(tmp_path):
    write_log(tmp_path / "log.csv", [{"epoch": 1, "step": 4, "loss": 2.0, "val_spearman": 0.5}])
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "epoch,step,loss,val_spearman"
