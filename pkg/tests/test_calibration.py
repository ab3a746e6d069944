import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from microquant.calibration import (CalibrationModel, aggregate_trials_geomean, apply_calibration,
                                    expected_calibration_error, fit_features, knn_density, log_ball_volume,
                                    majority_vote, min_positive_nn, synthetic_scores, thresholded_metrics)
from microquant.errors import BadMagic, DataError, TruncatedPayload
from microquant.raster import LabelMap, ScoreStack


def test_geomean_identities():
    assert aggregate_trials_geomean([0.25, 1.0])[()] == pytest.approx(0.5)
    assert aggregate_trials_geomean([0.0, 1.0])[()] == 0.0
    v = np.array([[0.2, 0.9], [0.2, 0.4]])
    assert np.allclose(aggregate_trials_geomean(v), [0.2, 0.6])
    with pytest.raises(DataError):
        aggregate_trials_geomean([1.5])
    with pytest.raises(DataError):
        aggregate_trials_geomean(np.zeros((0, 3)))


@given(arrays(np.float64, 6, elements=st.floats(0.01, 1)))
def test_geomean_bounded_by_min_max(v):
    g = float(aggregate_trials_geomean(v))
    assert v.min() - 1e-12 <= g <= v.max() + 1e-12


def _stack(*trials):
    # trials: list of (C,) score vectors for a single pixel
    return np.array(trials, dtype=np.float32)[:, :, None, None]


def test_majority_vote_examples():
    s = _stack([0.6, 0.4, 0, 0, 0], [0.7, 0.3, 0, 0, 0], [0.1, 0.9, 0, 0, 0])
    assert majority_vote(s)[0, 0] == 0
    # one vote each: class 1 has the higher mean score
    s = _stack([0.6, 0.4, 0, 0, 0], [0.0, 1.0, 0, 0, 0])
    assert majority_vote(s)[0, 0] == 1
    # equal votes and equal means: lower class wins
    s = _stack([0.6, 0.4, 0, 0, 0], [0.4, 0.6, 0, 0, 0])
    assert majority_vote(s)[0, 0] == 0


def _brute_counts(features, truth, n_classes=5):
    n_all, n_cor = [0] * n_classes, [0] * n_classes
    for f, t in zip(features.tolist(), truth.tolist()):
        c = max(range(n_classes), key=lambda i: (f[i], -i))
        n_all[c] += 1
        n_cor[c] += int(c == t)
    return n_all, n_cor


def test_fit_counts_match_tally():
    f, t, _, _ = synthetic_scores(3000, seed=5)
    m = fit_features(f, t, k=10)
    n_all, n_cor = _brute_counts(f.astype(np.float32), t)
    assert m.n_all.tolist() == n_all and m.n_correct.tolist() == n_cor
    assert m.dim == 4


def test_all_correct_gives_full_confidence(rng):
    f = rng.dirichlet(np.ones(5), 400)
    t = np.argmax(f, axis=1)
    m = fit_features(f, t, k=7)
    q = rng.dirichlet(np.ones(5), 50)
    for c in range(5):
        assert np.allclose(m.confidence(q, c), 1.0)


def test_uncalibratable_and_no_correct_give_zero(rng):
    f = np.zeros((20, 5))
    f[:, 0] = 1
    f[:, 1] = rng.random(20) * 0.5
    m = fit_features(f, np.ones(20, int), k=3)  # predicted 0, never correct
    assert m.n_correct[0] == 0 and (m.confidence(f[:3], 0) == 0).all()
    assert not m.calibratable(3) and (m.confidence(f[:3], 3) == 0).all()


def _kth_radius_1d(samples, q, k):
    return sorted(abs(s - q) for s in samples)[k - 1]


def test_knn_density_1d_oracle(rng):
    s = rng.random(500)
    qs = np.linspace(0.1, 0.9, 9)
    got = knn_density(s, qs, 20)
    want = [20 / (500 * 2 * _kth_radius_1d(s, q, 20)) for q in qs]
    assert np.allclose(got, want, rtol=1e-12)
    # uniform samples: a histogram estimate and the kNN estimate are both near 1
    hist, _ = np.histogram(s, bins=10, range=(0, 1), density=True)
    assert abs(np.mean(got) - np.mean(hist)) < 0.25


def test_ball_volume():
    assert math.exp(log_ball_volume(1.0, 2)) == pytest.approx(math.pi)
    assert math.exp(log_ball_volume(2.0, 3)) == pytest.approx(4 / 3 * math.pi * 8)
    assert math.exp(log_ball_volume(0.5, 1)) == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_duplication_halves_k(j, seed):
    rng = np.random.default_rng(seed)
    s = rng.random((60, 2))
    q = rng.random((10, 2)) + 0.01
    dup = np.concatenate([s, s])
    assert np.allclose(knn_density(dup, q, 2 * j), knn_density(s, q, j), rtol=1e-12)


def test_density_scaling(rng):
    s = rng.random((200, 3))
    q = rng.random((5, 3))
    a = 3.0
    # x -> a x divides a density in D dimensions by a**D
    assert np.allclose(knn_density(a * s, a * q, 5), knn_density(s, q, 5) / a ** 3, rtol=1e-10)


def test_min_positive_nn_ignores_duplicates():
    pts = np.array([[0, 0], [0, 0], [0.5, 0], [2, 0]])
    assert min_positive_nn(pts) == 0.5


def test_mqcm_round_trip(tmp_path, rng):
    f, t, _, _ = synthetic_scores(500, seed=1)
    m = fit_features(f, t, k=5)
    p = tmp_path / "m.mqcm"
    m.save(p)
    m2 = CalibrationModel.load(p)
    assert m2.to_bytes() == m.to_bytes()
    assert m2.k == 5 and m2.dim == 4 and m2.cap == m.cap
    q = rng.dirichlet(np.ones(5), 20)
    assert np.array_equal(m2.confidence(q, 2), m.confidence(q, 2))
    data = m.to_bytes()
    with pytest.raises(BadMagic):
        CalibrationModel.from_bytes(b"XXXX" + data[4:])
    with pytest.raises(TruncatedPayload):
        CalibrationModel.from_bytes(data[:-7])
    with pytest.raises(DataError):
        CalibrationModel.from_bytes(data + b"\0")


def test_thresholded_metrics():
    truth = LabelMap(np.array([[0, 0, 1, 2]], np.uint8))
    pred = LabelMap(np.array([[0, 1, 1, 2]], np.uint8))
    conf = np.array([[0.99, 0.5, 0.97, 0.2]])
    full = thresholded_metrics(pred, conf, truth, 0.0)
    assert full.precision[1] == 0.5 and full.recall[0] == 0.5
    m = thresholded_metrics(pred, conf, truth, 0.95)
    assert m.precision[1] == 1.0 and m.recall[2] == 0.0 and m.recall[0] == 0.5
    none = thresholded_metrics(pred, np.zeros((1, 4)), truth, 0.95)
    assert all(math.isnan(p) for p in none.precision) and none.recall[0] == 0.0


def test_ece():
    assert expected_calibration_error([1.0, 1.0], [1, 1]) == 0.0
    assert expected_calibration_error([0.8] * 10, [1] * 10) == pytest.approx(0.2)
    assert expected_calibration_error([0.25, 0.75], [0, 1]) == pytest.approx(0.25)


def test_apply_calibration_shapes(rng):
    f, t, _, _ = synthetic_scores(2000, seed=2)
    m = fit_features(f, t, k=10)
    s = rng.dirichlet(np.ones(5), (3, 4, 6)).transpose(0, 3, 1, 2).astype(np.float32)
    res = apply_calibration(m, ScoreStack(s), pixel_size=0.1)
    assert res.predicted.shape == (4, 6) and res.confidence.shape == (4, 6)
    assert ((res.confidence >= 0) & (res.confidence <= 1)).all()
    assert res.trials_used == 3 and res.confidence_png().dtype == np.uint8


def test_synthetic_scores_region_accuracy():
    f, t, region, acc = synthetic_scores(30_000, seed=0)
    assert np.allclose(f.sum(axis=1), 1)
    pred = np.argmax(f, axis=1)
    for j, a in enumerate((0.6, 0.8, 0.95)):
        sel = region % 3 == j
        assert abs(np.mean(pred[sel] == t[sel]) - a) < 0.03
