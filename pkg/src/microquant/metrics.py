"""Confusion-matrix metrics for five-class label maps.

Undefined ratios (0/0) are carried as NaN and serialized as ``null``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatch
from .raster import CLASS_NAMES, N_CLASSES, LabelMap

# F-beta per class: precision-weighted for grain, recall-weighted otherwise
BETAS = np.array([0.5, 2.0, 2.0, 2.0, 2.0])


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``counts[i, j]`` = pixels of true class i predicted as class j."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (N_CLASSES, N_CLASSES):
            raise DataError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}")
        if (c < 0).any():
            raise DataError("confusion counts must be non-negative")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def truth_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def pred_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def confusion(truth: LabelMap, pred: LabelMap, retained=None) -> ConfusionMatrix:
    t = truth.pixels if isinstance(truth, LabelMap) else np.asarray(truth)
    p = pred.pixels if isinstance(pred, LabelMap) else np.asarray(pred)
    if t.shape != p.shape:
        raise DimensionMismatch(f"truth {t.shape} and prediction {p.shape} differ")
    codes = t.astype(np.int64) * N_CLASSES + p.astype(np.int64)
    if retained is not None:
        codes = codes[np.asarray(retained, dtype=bool)]
    counts = np.bincount(codes.ravel(), minlength=N_CLASSES ** 2)
    return ConfusionMatrix(counts.reshape(N_CLASSES, N_CLASSES))


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def precision_recall(cm: ConfusionMatrix, truth_totals=None):
    """Per-class precision (over predicted) and recall (over truth); NaN where 0/0.

    ``truth_totals`` overrides the recall denominators, used when some pixels
    were dropped from ``cm`` but still count as missed.
    """
    diag = np.diag(cm.counts)
    tt = cm.truth_totals() if truth_totals is None else np.asarray(truth_totals)
    return _ratio(diag, cm.pred_totals()), _ratio(diag, tt)


def f_beta(p, r, beta):
    if beta < 0:
        raise DataError("beta must be non-negative")
    b2 = beta * beta
    den = b2 * p + r
    if den == 0:
        return 0.0
    return (1 + b2) * p * r / den


def f_scores(precision, recall):
    """Per-class F with the grain/defect beta schedule; NaN only if both inputs are."""
    out = np.full(N_CLASSES, np.nan)
    for i in range(N_CLASSES):
        p, r = precision[i], recall[i]
        if math.isnan(p) and math.isnan(r):
            continue
        out[i] = f_beta(0.0 if math.isnan(p) else p, 0.0 if math.isnan(r) else r, BETAS[i])
    return out


def f_d(cm: ConfusionMatrix, truth_totals=None) -> float:
    """Sum of per-class F scores over all five classes divided by 5 (undefined -> 0)."""
    f = f_scores(*precision_recall(cm, truth_totals))
    return float(np.nansum(f) / N_CLASSES)


def iou_per_class(cm: ConfusionMatrix, truth_totals=None) -> np.ndarray:
    diag = np.diag(cm.counts)
    tt = cm.truth_totals() if truth_totals is None else np.asarray(truth_totals)
    return _ratio(diag, tt + cm.pred_totals() - diag)


def iou_pixel(cm: ConfusionMatrix, truth_totals=None) -> float:
    """Mean IoU over classes that occur in truth or prediction."""
    iou = iou_per_class(cm, truth_totals)
    return _nanmean(iou)


def _nanmean(a) -> float:
    a = np.asarray(a, dtype=float)
    a = a[~np.isnan(a)]
    return float(a.mean()) if a.size else math.nan


def weighted_metrics(cm: ConfusionMatrix, truth_totals=None) -> dict:
    """Per-class metrics weighted by the truth-class pixel proportions."""
    tt = cm.truth_totals() if truth_totals is None else np.asarray(truth_totals)
    total = tt.sum()
    if total == 0:
        return {k: math.nan for k in ("precision", "recall", "f_d", "iou")}
    w = tt / total
    p, r = precision_recall(cm, tt)
    f = f_scores(p, r)
    iou = iou_per_class(cm, tt)

    def wsum(v):
        return float(np.sum(w * np.nan_to_num(v, nan=0.0)))

    return {"precision": wsum(p), "recall": wsum(r), "f_d": wsum(f), "iou": wsum(iou)}


@dataclass(frozen=True)
class ClassMetrics:
    precision: tuple
    recall: tuple
    f_score: tuple
    iou: tuple
    macro: dict
    weighted: dict
    n_pixels: int

    def to_json(self) -> dict:
        per_class = {
            name: {"precision": _js(self.precision[i]), "recall": _js(self.recall[i]),
                   "f_beta": _js(self.f_score[i]), "beta": float(BETAS[i]), "iou": _js(self.iou[i])}
            for i, name in enumerate(CLASS_NAMES)
        }
        return {"per_class": per_class,
                "macro": {k: _js(v) for k, v in self.macro.items()},
                "weighted": {k: _js(v) for k, v in self.weighted.items()},
                "n_pixels": self.n_pixels}


def _js(v):
    v = float(v)
    return None if math.isnan(v) else v


def class_metrics(cm: ConfusionMatrix, truth_totals=None) -> ClassMetrics:
    p, r = precision_recall(cm, truth_totals)
    f = f_scores(p, r)
    iou = iou_per_class(cm, truth_totals)
    macro = {"precision": _nanmean(p), "recall": _nanmean(r),
             "f_d": f_d(cm, truth_totals), "iou": _nanmean(iou)}
    return ClassMetrics(tuple(p.tolist()), tuple(r.tolist()), tuple(f.tolist()), tuple(iou.tolist()),
                        macro, weighted_metrics(cm, truth_totals), cm.total)


def evaluate_pixels(truth: LabelMap, pred: LabelMap) -> ClassMetrics:
    return class_metrics(confusion(truth, pred))


def overall_score(f_d_value, iou_value, box_avg) -> float:
    """Plain mean of F_D, pixel IoU and the averaged box IoU."""
    return (f_d_value + iou_value + box_avg) / 3.0


def average_across_images(records):
    """Unweighted per-key mean over image records, skipping undefined values.

    ``records`` is a sequence of flat ``{metric: value}`` dicts. Returns
    ``(means, counts)`` where ``counts[k]`` is how many images contributed.
    """
    records = list(records)
    if not records:
        raise DataError("no image records to average")
    keys = []
    for rec in records:
        keys.extend(k for k in rec if k not in keys)
    means, counts = {}, {}
    for k in keys:
        vals = [float(rec[k]) for rec in records if rec.get(k) is not None and not math.isnan(float(rec[k]))]
        counts[k] = len(vals)
        means[k] = math.fsum(vals) / len(vals) if vals else math.nan
    return means, counts

