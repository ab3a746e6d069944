import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import metrics_by_hand
from microquant.errors import DataError, DimensionMismatch
from microquant.metrics import (ConfusionMatrix, average_across_images, class_metrics, confusion, f_beta, f_d,
                                iou_pixel, overall_score, precision_recall, weighted_metrics)
from microquant.raster import LabelMap

FIXED = [
    np.diag([10, 5, 3, 2, 1]),
    np.array([[50, 5, 0, 0, 0], [4, 20, 1, 0, 0], [0, 0, 8, 2, 0], [1, 0, 0, 6, 1], [0, 2, 0, 0, 9]]),
    np.array([[90, 0, 0, 0, 0], [10, 0, 0, 0, 0], [0, 0, 0, 0, 0], [0, 0, 0, 0, 0], [0, 0, 0, 0, 0]]),
    np.array([[0, 3, 0, 0, 0], [0, 0, 3, 0, 0], [0, 0, 0, 3, 0], [0, 0, 0, 0, 3], [3, 0, 0, 0, 0]]),
    np.array([[7, 1, 1, 0, 0], [2, 3, 0, 0, 0], [0, 0, 0, 0, 4], [0, 0, 0, 0, 0], [0, 0, 0, 0, 0]]),
]


@pytest.mark.parametrize("counts", FIXED)
def test_fixed_matrices_match_hand_oracle(counts):
    cm = ConfusionMatrix(counts)
    hand = metrics_by_hand(counts.tolist())
    m = class_metrics(cm)
    for i, (p, r, f, iou) in enumerate(hand):
        for got, want in ((m.precision[i], p), (m.recall[i], r), (m.f_score[i], f), (m.iou[i], iou)):
            if want is None:
                assert math.isnan(got)
            else:
                assert got == pytest.approx(want, abs=1e-15)
    # F_D divides by all five classes, undefined counting as 0
    assert m.macro["f_d"] == pytest.approx(sum(h[2] or 0 for h in hand) / 5, abs=1e-15)
    ious = [h[3] for h in hand if h[3] is not None]
    assert m.macro["iou"] == pytest.approx(sum(ious) / len(ious), abs=1e-15)


def test_grain_uses_f_half_and_defects_f_two():
    counts = np.zeros((5, 5), int)
    counts[0, 0], counts[0, 1] = 4, 6   # grain: p=1, r=0.4
    counts[2, 2], counts[2, 0] = 4, 6   # void: p=1, r=0.4 (grain column absorbs the misses)
    m = class_metrics(ConfusionMatrix(counts))
    p0, r0 = m.precision[0], m.recall[0]
    assert m.f_score[0] == pytest.approx(1.25 * p0 * r0 / (0.25 * p0 + r0))
    assert m.f_score[2] == pytest.approx(5 * 1.0 * 0.4 / (4 * 1.0 + 0.4))


def test_f_beta_examples():
    assert f_beta(0.8, 0.4, 2) == pytest.approx(5 * 0.32 / 3.6)
    assert f_beta(0, 0, 0.5) == 0
    with pytest.raises(DataError):
        f_beta(0.5, 0.5, -1)


def test_confusion_from_maps():
    t = LabelMap(np.array([[0, 1], [2, 2]], np.uint8))
    p = LabelMap(np.array([[0, 2], [2, 0]], np.uint8))
    cm = confusion(t, p)
    assert cm.counts[0, 0] == 1 and cm.counts[1, 2] == 1 and cm.counts[2, 2] == 1 and cm.counts[2, 0] == 1
    assert cm.total == 4
    with pytest.raises(DimensionMismatch):
        confusion(t, LabelMap(np.zeros((3, 2), np.uint8)))


def test_weighted_metrics_by_truth_prevalence():
    counts = FIXED[1]
    cm = ConfusionMatrix(counts)
    w = counts.sum(axis=1) / counts.sum()
    p, r = precision_recall(cm)
    assert weighted_metrics(cm)["recall"] == pytest.approx(float(np.sum(w * r)))
    assert weighted_metrics(cm)["precision"] == pytest.approx(float(np.sum(w * np.nan_to_num(p))))


def test_overall_score_reference_values():
    assert round(overall_score(0.861, 0.751, 0.603), 3) == 0.738
    assert round(overall_score(0.869, 0.731, 0.581), 3) == 0.727
    # rounding anomaly: these entries average to 62.43, the reference score is 62.5
    assert overall_score(0.705, 0.593, 0.575) * 100 == pytest.approx(62.5, abs=0.1)


def test_average_across_images():
    assert average_across_images([{"a": 0.6}])[0] == {"a": 0.6}
    means, counts = average_across_images([{"a": 0.6, "b": math.nan}, {"a": 0.8, "b": 0.5}])
    assert means["a"] == pytest.approx(0.7) and means["b"] == 0.5 and counts["b"] == 1
    with pytest.raises(DataError):
        average_across_images([])


@settings(max_examples=200)
@given(arrays(np.int64, (5, 5), elements=st.integers(0, 50)))
def test_metric_ranges(counts):
    m = class_metrics(ConfusionMatrix(counts))
    for v in m.precision + m.recall + m.f_score + m.iou + tuple(m.macro.values()) + tuple(m.weighted.values()):
        assert math.isnan(v) or -1e-12 <= v <= 1 + 1e-12


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 5))
def test_f_beta_monotone(p, r, dp, beta):
    assert f_beta(p, r, 1) == pytest.approx(f_beta(r, p, 1))
    assert f_beta(min(p + dp, 1), r, beta) >= f_beta(p, r, beta) - 1e-12
    assert f_beta(p, min(r + dp, 1), beta) >= f_beta(p, r, beta) - 1e-12


@given(arrays(np.uint8, (6, 7), elements=st.integers(0, 4)))
def test_self_confusion_diagonal(px):
    cm = confusion(LabelMap(px), LabelMap(px))
    assert (cm.counts == np.diag(np.diag(cm.counts))).all()


def test_total_misclassification():
    cm = ConfusionMatrix(FIXED[3])
    assert iou_pixel(cm) == 0 and f_d(cm) == 0


@given(st.permutations([0.3, 0.5, 0.9]))
def test_overall_score_symmetric(args):
    assert overall_score(*args) == pytest.approx(overall_score(0.3, 0.5, 0.9))
