import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewrank.boxes import Box, as_box_array, validate_box
from viewrank.views import (
    Annotation,
    SlidingWindowConfig,
    boundary_displacement,
    generate_windows,
    iou,
    iou_matrix,
    nms,
    parse_ratio,
    pick_best_view,
    top1_max_iou,
    window_shape,
)

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "viewrank" / "configs"


@st.composite
def boxes(draw):
    x0 = draw(st.floats(0.0, 0.9))
    y0 = draw(st.floats(0.0, 0.9))
    x1 = draw(st.floats(x0 + 0.01, 1.0))
    y1 = draw(st.floats(y0 + 0.01, 1.0))
    return Box(x0, y0, x1, y1)


def random_box_set(rng, n):
    w = rng.uniform(0.05, 0.8, n)
    h = rng.uniform(0.05, 0.8, n)
    x0 = rng.uniform(0, 1 - w)
    y0 = rng.uniform(0, 1 - h)
    return np.stack([x0, y0, x0 + w, y0 + h], 1)


def test_box_validation():
    assert validate_box([0, 0, 1, 1]).area == 1.0
    for bad in ([0.5, 0, 0.5, 1], [0, 0, 1.1, 1], [0, 0, 1], [np.nan, 0, 1, 1]):
        with pytest.raises(ValueError):
            validate_box(bad)
    assert as_box_array([]).shape == (0, 4)
    with pytest.raises(ValueError):
        as_box_array([[0, 0, 1, 1], [0.6, 0, 0.5, 1]])


def test_iou_examples():
    assert iou((0.1, 0.2, 0.4, 0.9), (0.1, 0.2, 0.4, 0.9)) == 1.0
    assert iou((0, 0, 0.5, 0.5), (0, 0, 1, 1)) == 0.25
    assert iou((0, 0, 0.2, 0.2), (0.5, 0.5, 1, 1)) == 0.0
    assert iou((0, 0, 0.5, 1), (0.25, 0, 0.75, 1)) == pytest.approx(1 / 3, abs=1e-15)


def test_displacement_examples():
    a = (0.1, 0.2, 0.5, 0.6)
    assert boundary_displacement(a, a) == 0.0
    assert boundary_displacement(a, (0.2, 0.2, 0.6, 0.6)) == pytest.approx(0.05, abs=1e-15)
    assert boundary_displacement((0, 0, 1, 1), (0.1, 0.1, 0.9, 0.9)) == pytest.approx(0.1, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(boxes(), boxes(), st.floats(0.1, 1.0))
def test_iou_properties(a, b, k):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a), abs=1e-15)
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)
    if not np.allclose(a, b, atol=1e-6):
        assert v < 1.0
    assert iou(np.array(a) * k, np.array(b) * k) == pytest.approx(v, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(boxes(), boxes(), boxes())
def test_displacement_is_a_metric(a, b, c):
    assert boundary_displacement(a, a) == 0.0
    assert boundary_displacement(a, b) == boundary_displacement(b, a)
    assert boundary_displacement(a, c) <= boundary_displacement(a, b) + boundary_displacement(b, c) + 1e-12


def test_iou_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    a, b = random_box_set(rng, 5), random_box_set(rng, 4)
    m = iou_matrix(a, b)
    for i in range(5):
        for j in range(4):
            assert m[i, j] == pytest.approx(iou(a[i], b[j]))


def test_top1_max_iou():
    gt = [Box(0, 0, 0.5, 0.5), Box(0.5, 0.5, 1, 1)]
    assert top1_max_iou(Box(0, 0, 0.5, 0.5), Annotation("x", gt)) == 1.0
    rng = np.random.default_rng(1)
    ten = [Box(*b) for b in random_box_set(rng, 10)]
    assert top1_max_iou(ten[7], Annotation("y", ten)) == 1.0
    p = Box(0.1, 0.1, 0.6, 0.7)
    assert top1_max_iou(p, Annotation("z", [ten[0]])) == iou(p, ten[0])
    assert top1_max_iou(p, ten) == pytest.approx(max(iou(p, g) for g in ten))


def test_annotation_needs_boxes():
    with pytest.raises(ValueError):
        Annotation("empty", [])


def test_pick_best_view():
    bx = random_box_set(np.random.default_rng(2), 3)
    assert pick_best_view(bx[:1], [0.0]) == Box(*bx[0])
    assert pick_best_view(bx, [1, 3, 2]) == Box(*bx[1])
    assert pick_best_view(bx, [5, 5, 5]) == Box(*bx[0])
    with pytest.raises(ValueError):
        pick_best_view(bx, [1, 2])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pick_best_view_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    bx = random_box_set(rng, 8)
    s = rng.normal(size=8)
    assert pick_best_view(bx, s) == pick_best_view(bx, np.exp(2 * s) + 3)


def test_nms_examples():
    same = np.tile([[0.1, 0.1, 0.5, 0.5]], (4, 1))
    assert len(nms(same, 0.5)) == 1
    disjoint = np.array([[0, 0, 0.2, 0.2], [0.5, 0.5, 0.9, 0.9]])
    for thr in (0.01, 0.5, 1.0):
        assert len(nms(disjoint, thr)) == 2


def test_nms_keeps_only_low_overlap():
    bx = random_box_set(np.random.default_rng(3), 60)
    kept = nms(bx, 0.4)
    m = iou_matrix(kept, kept)
    np.fill_diagonal(m, 0)
    assert m.max() < 0.4


def test_nms_idempotent_subset_order_stable():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        bx = random_box_set(rng, int(rng.integers(0, 15)))
        thr = rng.uniform(0.05, 1.0)
        once = nms(bx, thr)
        np.testing.assert_array_equal(nms(once, thr), once)
        idx = [int(np.flatnonzero((bx == b).all(1))[0]) for b in once]
        assert idx == sorted(idx)


def test_parse_ratio():
    assert parse_ratio("16:9") == pytest.approx(16 / 9)
    assert parse_ratio((3, 4)) == 0.75
    assert parse_ratio(2) == 2.0
    for bad in ("0:1", "1:0", "a:b", -1, (1,)):
        with pytest.raises(ValueError):
            parse_ratio(bad)


def test_window_shape_area_and_clamp():
    w, h = window_shape(0.7, 16 / 9)
    assert w * h == pytest.approx(0.49)
    assert w / h == pytest.approx(16 / 9)
    w, h = window_shape(0.9, 16 / 9)  # width would exceed 1
    assert w == 1.0 and w / h == pytest.approx(16 / 9)


def test_generate_full_image():
    for stride in (0.05, 0.3, 1.0):
        out = generate_windows(SlidingWindowConfig([1.0], ["1:1"], stride=stride))
        np.testing.assert_array_equal(out, [[0, 0, 1, 1]])


def test_generate_two_by_two():
    out = generate_windows(SlidingWindowConfig([0.5], ["1:1"], stride=0.5))
    np.testing.assert_allclose(out, [[0, 0, .5, .5], [.5, 0, 1, .5], [0, .5, .5, 1], [.5, .5, 1, 1]])


def test_generate_includes_far_border():
    out = generate_windows(SlidingWindowConfig([0.5], ["1:1"], stride=0.3))
    assert np.isclose(out[:, 2], 1.0).any() and np.isclose(out[:, 3], 1.0).any()


def test_generate_boxes_valid_and_deterministic():
    cfg = SlidingWindowConfig(stride=0.1)
    a = generate_windows(cfg)
    as_box_array(a)
    assert a.tobytes() == generate_windows(cfg).tobytes()


def test_min_coverage_filter():
    cfg = SlidingWindowConfig([0.5, 0.9], ["1:1"], stride=0.25, min_coverage=0.5)
    out = generate_windows(cfg)
    assert len(out) > 0
    assert ((out[:, 2] - out[:, 0]) * (out[:, 3] - out[:, 1]) >= 0.5 - 1e-9).all()


@pytest.mark.parametrize("count", [344, 919, 1745])
def test_committed_configs_reproduce_counts(count):
    path = CONFIGS / f"candidates_{count}.json"
    assert json.loads(path.read_text())["expected_count"] == count
    assert len(generate_windows(SlidingWindowConfig.from_json(path))) == count


@pytest.mark.parametrize("kwargs", [
    {"scales": [0.9, 0.6]},
    {"scales": [0.0]},
    {"stride": 0.0},
    {"nms_iou_threshold": 0.0},
    {"min_coverage": 1.5},
    {"aspect_ratios": ["1:0"]},
])
def test_window_config_validation(kwargs):
    with pytest.raises(ValueError):
        SlidingWindowConfig(**kwargs)
