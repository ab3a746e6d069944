"""Density-ratio calibration of per-pixel predictions over stochastic trials.

For a predicted class c, confidence at a score vector x is

    (n_correct / n_all) * rho_correct(x) / rho_all(x)

with kNN density estimates built from validation pixels predicted c. With
equal k in both components this reduces to (r_all / r_correct) ** d, where
r is the distance to the k-th neighbour and d the feature dimension.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gammaln

from .errors import BadMagic, DataError, DimensionMismatch, TruncatedPayload
from .metrics import class_metrics, confusion
from .raster import N_CLASSES, LabelMap, ScoreStack

DEFAULT_K = 10
DEFAULT_TAU = 0.95
DEFAULT_TRIALS = 10
MQCM_MAGIC = b"MQCM"
MQCM_VERSION = 1
_HEAD = struct.Struct("<4sIIIIId")
_CLASS_HEAD = struct.Struct("<QQ")
_FLOOR = float(np.finfo(np.float32).eps)


def log_ball_volume(r, d: int):
    """log of the volume of a d-ball of radius r."""
    r = np.asarray(r, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1) + d * np.log(r)


def knn_radius(tree: cKDTree, x, k: int, cap: float) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dist, _ = tree.query(x, k=[k])
    return np.maximum(dist[:, 0], cap)


def knn_density(samples, x, k: int, dim: int | None = None, cap: float | None = None) -> np.ndarray:
    """k / (n * V_d(r_k)) at each query point.

    ``samples`` is an (n, D) array or a prebuilt ``cKDTree``. ``dim`` defaults
    to D. Zero radii are raised to ``cap`` (by default the smallest positive
    nearest-neighbour distance among the samples).
    """
    if isinstance(samples, cKDTree):
        tree = samples
    else:
        a = np.asarray(samples, dtype=np.float64)
        tree = cKDTree(a[:, None] if a.ndim == 1 else a)
    n = tree.n
    if n == 0:
        raise DataError("empty density component")
    if not 1 <= k <= n:
        raise DataError(f"k must be in [1, {n}]")
    d = tree.m if dim is None else dim
    if cap is None:
        cap = min_positive_nn(tree.data)
    r = knn_radius(tree, np.asarray(x, float).reshape(-1, tree.m), k, cap)
    return np.exp(math.log(k / n) - log_ball_volume(r, d))


def min_positive_nn(points) -> float:
    """Smallest non-zero distance from a point to its nearest other point."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return _FLOOR
    uniq = np.unique(points, axis=0)
    if len(uniq) < 2:
        return _FLOOR
    dist, _ = cKDTree(uniq).query(uniq, k=[2])
    m = float(dist[:, 0].min())
    return m if m > 0 else _FLOOR


class CalibrationModel:
    """Per-class kNN density pairs over validation score vectors.

    Frozen after construction; queries do not mutate it.
    """

    def __init__(self, features, correct, k: int = DEFAULT_K, dim: int | None = None, cap: float | None = None):
        if k < 1:
            raise DataError("k must be >= 1")
        if len(features) != len(correct):
            raise DataError("one feature array and one correctness array per class")
        self.n_classes = len(features)
        self.features = [np.ascontiguousarray(f, dtype=np.float32) for f in features]
        self.correct = [np.asarray(c, dtype=bool).ravel() for c in correct]
        nf = {f.shape[1] for f in self.features if f.ndim == 2 and len(f)}
        if len(nf) > 1:
            raise DimensionMismatch("feature dimension differs between classes")
        self.n_features = nf.pop() if nf else self.n_classes
        # score vectors live on a simplex, so their intrinsic dimension is C - 1
        self.dim = self.n_features - 1 if dim is None else int(dim)
        self.k = int(k)
        for f, c in zip(self.features, self.correct):
            if len(f) != len(c):
                raise DataError("feature and correctness lengths differ")
        self.n_all = np.array([len(f) for f in self.features], dtype=np.int64)
        self.n_correct = np.array([int(c.sum()) for c in self.correct], dtype=np.int64)
        if cap is None:
            pos = [min_positive_nn(f) for f in self.features if len(f) >= 2]
            cap = min(pos) if pos else _FLOOR
        self.cap = float(cap)
        self._trees = {}

    def calibratable(self, c: int) -> bool:
        return bool(self.n_all[c] > 0)

    def _tree(self, c: int, which: str) -> cKDTree:
        key = (c, which)
        if key not in self._trees:
            f = self.features[c].astype(np.float64)
            self._trees[key] = cKDTree(f if which == "all" else f[self.correct[c]])
        return self._trees[key]

    def density(self, c: int, x, which: str = "all") -> np.ndarray:
        n = self.n_all[c] if which == "all" else self.n_correct[c]
        if n == 0:
            return np.zeros(len(np.atleast_2d(x)))
        return knn_density(self._tree(c, which), x, min(self.k, int(n)), self.dim, self.cap)

    def confidence(self, x, c: int) -> np.ndarray:
        """Clipped density-ratio confidence of predicting class ``c`` at ``x``.

        Uncalibratable classes and classes without correct samples give 0.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.n_correct[c] == 0:
            return np.zeros(len(x))
        k_all = min(self.k, int(self.n_all[c]))
        k_cor = min(self.k, int(self.n_correct[c]))
        r_all = knn_radius(self._tree(c, "all"), x, k_all, self.cap)
        r_cor = knn_radius(self._tree(c, "correct"), x, k_cor, self.cap)
        # (n_c/n_a) * (k_c/(n_c V_c)) / (k_a/(n_a V_a)) = (k_c/k_a) * V_a / V_c
        log_ratio = math.log(k_cor / k_all) + self.dim * (np.log(r_all) - np.log(r_cor))
        return np.clip(np.exp(np.minimum(log_ratio, 0.0)), 0.0, 1.0)

    # serialization -------------------------------------------------------

    def to_bytes(self) -> bytes:
        parts = [_HEAD.pack(MQCM_MAGIC, MQCM_VERSION, self.n_classes, self.n_features, self.k, self.dim, self.cap)]
        for f, c in zip(self.features, self.correct):
            parts.append(_CLASS_HEAD.pack(len(f), int(c.sum())))
            parts.append(f.reshape(-1, self.n_features).astype("<f4").tobytes())
            parts.append(c.astype(np.uint8).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CalibrationModel":
        if data[:4] != MQCM_MAGIC:
            raise BadMagic("not a calibration model (bad magic)")
        if len(data) < _HEAD.size:
            raise TruncatedPayload("calibration model header truncated")
        _, ver, nc, nf, k, dim, cap = _HEAD.unpack_from(data)
        if ver != MQCM_VERSION:
            raise DataError(f"unsupported calibration model version {ver}")
        off = _HEAD.size
        feats, cors = [], []
        for _ in range(nc):
            if off + _CLASS_HEAD.size > len(data):
                raise TruncatedPayload("calibration model truncated")
            n, nco = _CLASS_HEAD.unpack_from(data, off)
            off += _CLASS_HEAD.size
            end = off + 4 * n * nf + n
            if end > len(data):
                raise TruncatedPayload("calibration model truncated")
            feats.append(np.frombuffer(data, "<f4", n * nf, off).reshape(n, nf))
            off += 4 * n * nf
            cors.append(np.frombuffer(data, np.uint8, n, off).astype(bool))
            off += n
            if int(cors[-1].sum()) != nco:
                raise DataError("calibration model counts are inconsistent")
        if off != len(data):
            raise DataError("trailing bytes after calibration model")
        return cls(feats, cors, k, dim, cap)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CalibrationModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def fit_features(features, truth, k: int = DEFAULT_K, n_classes: int = N_CLASSES, dim=None) -> CalibrationModel:
    """Model from raw (N, C) score vectors and truth labels; prediction is the argmax."""
    features = np.asarray(features, dtype=np.float32)
    truth = np.asarray(truth).ravel()
    if features.ndim != 2 or len(features) != len(truth):
        raise DimensionMismatch("features must be (N, C) with one truth label per row")
    if len(features) == 0:
        raise DataError("empty validation set")
    pred = np.argmax(features, axis=1)
    feats, cors = [], []
    for c in range(n_classes):
        sel = pred == c
        feats.append(features[sel])
        cors.append(truth[sel] == c)
    return CalibrationModel(feats, cors, k, dim)


def fit_calibration(val_scores: ScoreStack, val_truth: LabelMap, k: int = DEFAULT_K) -> CalibrationModel:
    """Every (trial, pixel) score vector becomes one validation sample."""
    if (val_scores.height, val_scores.width) != val_truth.shape:
        raise DimensionMismatch(
            f"scores {val_scores.height}x{val_scores.width} vs truth {val_truth.height}x{val_truth.width}")
    truth = val_truth.pixels.ravel()
    feats = np.concatenate([val_scores.features(t) for t in range(val_scores.trials)])
    return fit_features(feats, np.tile(truth, val_scores.trials), k)


def aggregate_trials_geomean(values, axis=0) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise DataError("no trial confidences to aggregate")
    if (v < 0).any() or (v > 1).any():
        raise DataError("confidences must be in [0, 1]")
    with np.errstate(divide="ignore"):
        out = np.exp(np.mean(np.log(v), axis=axis))
    return out


def majority_vote(scores) -> np.ndarray:
    """Mode of per-trial argmax; ties go to the higher mean score, then the lower class."""
    s = scores.scores if isinstance(scores, ScoreStack) else np.asarray(scores)
    n_cls = s.shape[1]
    am = np.argmax(s, axis=1)
    counts = np.stack([(am == c).sum(axis=0) for c in range(n_cls)])
    mean = s.mean(axis=0, dtype=np.float64)
    tied = counts == counts.max(axis=0)
    return np.argmax(np.where(tied, mean, -np.inf), axis=0).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class CalibratedResult:
    predicted: LabelMap
    confidence: np.ndarray
    trials_used: int
    uncalibratable: tuple

    def confidence_png(self) -> np.ndarray:
        return np.floor(np.clip(self.confidence, 0, 1) * 255 + 0.5).astype(np.uint8)


def apply_calibration(model: CalibrationModel, scores: ScoreStack, pixel_size: float = 1.0) -> CalibratedResult:
    """Majority-vote labels plus the geometric mean over trials of each trial's confidence."""
    if scores.scores.shape[1] != model.n_features:
        raise DimensionMismatch("score stack class count differs from the model")
    vote = majority_vote(scores)
    flat = vote.ravel()
    per_trial = np.zeros((scores.trials, flat.size))
    for t in range(scores.trials):
        x = scores.features(t)
        for c in np.unique(flat):
            sel = flat == c
            per_trial[t, sel] = model.confidence(x[sel], int(c))
    conf = aggregate_trials_geomean(per_trial).reshape(vote.shape)
    bad = tuple(c for c in range(model.n_classes) if not model.calibratable(c) and (flat == c).any())
    return CalibratedResult(LabelMap(vote, pixel_size), conf, scores.trials, bad)


def thresholded_metrics(pred, confidence, truth, tau: float = DEFAULT_TAU):
    """Metrics over pixels with confidence >= tau; dropped truth pixels count as missed."""
    if not 0 <= tau <= 1:
        raise DataError("tau must be in [0, 1]")
    full = confusion(truth, pred)
    kept = confusion(truth, pred, retained=np.asarray(confidence) >= tau)
    return class_metrics(kept, truth_totals=full.truth_totals())


def expected_calibration_error(confidence, correct, n_bins: int = 10) -> float:
    conf = np.asarray(confidence, dtype=float).ravel()
    ok = np.asarray(correct, dtype=float).ravel()
    if conf.size == 0:
        raise DataError("no samples")
    b = np.minimum((conf * n_bins).astype(int), n_bins - 1)
    n = np.bincount(b, minlength=n_bins)
    gap = np.abs(np.bincount(b, ok, n_bins) - np.bincount(b, conf, n_bins))
    return float(gap.sum() / conf.size) if n.sum() else math.nan


# synthetic benchmark ---------------------------------------------------------

REGION_ACCURACY = (0.6, 0.8, 0.95)


def synthetic_scores(n: int, seed=0, accuracies=REGION_ACCURACY, concentration: float = 400.0,
                     n_classes: int = N_CLASSES):
    """Score vectors from a mixture with known per-region accuracy.

    Each (predicted class c, region j) is a tight Dirichlet blob whose mean
    puts 0.6 on c and 0.3 on a region-specific runner-up class; the true
    label is c with probability ``accuracies[j]`` and the runner-up
    otherwise. Returns ``(features, truth, region, accuracy)`` where
    ``region = c * len(accuracies) + j``.
    """
    rng = np.random.default_rng(seed)
    nr = len(accuracies)
    region = rng.integers(0, n_classes * nr, n)
    feats = np.empty((n, n_classes))
    truth = np.empty(n, dtype=np.int64)
    acc = np.asarray(accuracies, dtype=float)[region % nr]
    for g in range(n_classes * nr):
        c, j = divmod(g, nr)
        other = (c + 1 + j) % n_classes
        mean = np.full(n_classes, 0.1 / (n_classes - 2))
        mean[c], mean[other] = 0.6, 0.3
        sel = np.flatnonzero(region == g)
        feats[sel] = rng.dirichlet(concentration * mean, sel.size)
        hit = rng.random(sel.size) < accuracies[j]
        truth[sel] = np.where(hit, c, other)
    return feats, truth, region, acc
