"""Defect clustering, area/density statistics and bounding-box IoU matching."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import DataError
from .raster import DEFECT_CLASSES, ClassId, LabelMap, parse_class

AREA_THRESHOLD = 0.001888  # um^2
AREA_THRESHOLD_LEGACY = 0.0087  # um^2, earlier single-image study
Z975 = 1.959963984540054

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class AnalysisConfig:
    area_threshold: float = AREA_THRESHOLD
    kernel_half_width: int = 1
    iterations: int = 1

    def __post_init__(self):
        if self.area_threshold < 0:
            raise DataError("area_threshold must be >= 0")
        if self.kernel_half_width < 0 or self.iterations < 0:
            raise DataError("dilation kernel and iterations must be >= 0")


@dataclass(frozen=True, eq=False)
class Defect:
    cls: ClassId
    ys: np.ndarray = field(repr=False)
    xs: np.ndarray = field(repr=False)
    pixel_size: float
    on_boundary: bool = False

    @property
    def n_pixels(self) -> int:
        return int(self.xs.size)

    @property
    def area(self) -> float:
        return self.n_pixels * self.pixel_size ** 2

    @property
    def centroid(self) -> tuple[float, float]:
        """Mean pixel centre (x, y) in micrometres."""
        return ((float(self.xs.mean()) + 0.5) * self.pixel_size,
                (float(self.ys.mean()) + 0.5) * self.pixel_size)

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """Half-open pixel rectangle (x0, y0, x1, y1)."""
        return (int(self.xs.min()), int(self.ys.min()), int(self.xs.max()) + 1, int(self.ys.max()) + 1)

    @property
    def bbox_um(self) -> tuple[float, float, float, float]:
        return tuple(v * self.pixel_size for v in self.bbox)

    def pixel_set(self) -> set:
        return set(zip(self.xs.tolist(), self.ys.tolist()))


def dilate(mask: np.ndarray, half_width: int = 1, iterations: int = 1) -> np.ndarray:
    """Binary dilation with a square (2h+1)^2 structuring element."""
    mask = np.asarray(mask, dtype=bool)
    if half_width == 0 or iterations == 0 or not mask.any():
        return mask.copy()
    k = 2 * half_width + 1
    return ndimage.binary_dilation(mask, structure=np.ones((k, k), dtype=bool), iterations=iterations)


def cluster_defects(labels: LabelMap, cls, config: AnalysisConfig = AnalysisConfig()) -> list[Defect]:
    """Group pixels of one defect class into defects.

    The class mask is dilated and split into 8-connected components; each
    defect keeps only the original (undilated) pixels of its component.
    Defects come out in raster order of their component's first pixel.
    """
    cls = parse_class(cls)
    if cls not in DEFECT_CLASSES:
        raise DataError(f"{cls.label} is not a defect class")
    mask = labels.mask(cls)
    if not mask.any():
        return []
    comp, _ = ndimage.label(dilate(mask, config.kernel_half_width, config.iterations), structure=_EIGHT)
    ys, xs = np.nonzero(mask)
    ids = comp[ys, xs]
    order = np.argsort(ids, kind="stable")
    ids, ys, xs = ids[order], ys[order], xs[order]
    cuts = np.flatnonzero(np.diff(ids)) + 1
    return [Defect(cls, y, x, labels.pixel_size)
            for y, x in zip(np.split(ys, cuts), np.split(xs, cuts))]


def filter_by_area(defects, eps: float = AREA_THRESHOLD) -> list[Defect]:
    if eps < 0:
        raise DataError("area threshold must be >= 0")
    return [d for d in defects if d.area > eps]


def quantify(labels: LabelMap, config: AnalysisConfig = AnalysisConfig()) -> dict:
    """Area-filtered defects for every defect class."""
    return {c: filter_by_area(cluster_defects(labels, c, config), config.area_threshold)
            for c in DEFECT_CLASSES}


@dataclass(frozen=True)
class DefectStats:
    n: int
    mean_area: float
    std_area: float
    ci_half_width: float
    density: float

    def to_json(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in self.__dict__.items()}


def defect_stats(defects, map_area: float) -> DefectStats:
    """Mean/sample-std area, 95% CI half-width of the mean, and count density."""
    if not map_area > 0:
        raise DataError("map area must be positive")
    areas = np.array([d.area for d in defects], dtype=float)
    n = areas.size
    mean = float(areas.mean()) if n else math.nan
    std = float(areas.std(ddof=1)) if n >= 2 else math.nan
    ci = Z975 * std / math.sqrt(n) if n >= 2 else math.nan
    return DefectStats(n, mean, std, ci, n / map_area)


def rect_iou(a, b) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    inter = ix * iy if ix > 0 and iy > 0 else 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _frame(reference, candidates):
    """Common coordinate frame for matching.

    Within one image every defect shares a pixel size; coordinates are then
    integer pixels measured from the scene's own minimum corner, which makes
    the result exactly invariant to integer translations. Mixed pixel sizes
    fall back to micrometres.
    """
    both = list(reference) + list(candidates)
    if len({d.pixel_size for d in both}) == 1:
        ox = min(int(d.xs.min()) for d in both)
        oy = min(int(d.ys.min()) for d in both)
        return ox, oy, None
    return 0, 0, True


def _arrays(defects, frame=(0, 0, True)):
    ox, oy, um = frame
    if um:
        c = np.array([d.centroid for d in defects], dtype=float).reshape(-1, 2)
        b = np.array([d.bbox_um for d in defects], dtype=float).reshape(-1, 4)
        return c, b
    c = np.array([(float((d.xs - ox).mean()) + 0.5, float((d.ys - oy).mean()) + 0.5) for d in defects],
                 dtype=float).reshape(-1, 2)
    b = np.array([d.bbox for d in defects], dtype=np.int64).reshape(-1, 4) - [ox, oy, ox, oy]
    return c, b


def nearest_matches(reference, candidates, frame=None) -> np.ndarray:
    """Index of the centroid-nearest candidate for each reference defect.

    Ties resolve to the lowest candidate index.
    """
    frame = _frame(reference, candidates) if frame is None else frame
    rc, _ = _arrays(reference, frame)
    cc, _ = _arrays(candidates, frame)
    out = np.empty(len(rc), dtype=np.int64)
    for s in range(0, len(rc), 2048):
        d2 = ((rc[s:s + 2048, None, :] - cc[None, :, :]) ** 2).sum(axis=2)
        out[s:s + 2048] = np.argmin(d2, axis=1)
    return out


def match_and_box_iou(reference, candidates, return_pairs=False):
    """Mean bbox IoU between each reference defect and its nearest candidate.

    With truth as reference this is the recall box IoU, with predictions as
    reference the precision box IoU. NaN when either list is empty.
    """
    reference, candidates = list(reference), list(candidates)
    if not reference or not candidates:
        return (math.nan, []) if return_pairs else math.nan
    frame = _frame(reference, candidates)
    k = nearest_matches(reference, candidates, frame)
    _, rb = _arrays(reference, frame)
    _, cb = _arrays(candidates, frame)
    m = cb[k]
    ix = np.minimum(rb[:, 2], m[:, 2]) - np.maximum(rb[:, 0], m[:, 0])
    iy = np.minimum(rb[:, 3], m[:, 3]) - np.maximum(rb[:, 1], m[:, 1])
    inter = np.where((ix > 0) & (iy > 0), ix * iy, 0)
    union = ((rb[:, 2] - rb[:, 0]) * (rb[:, 3] - rb[:, 1])
             + (m[:, 2] - m[:, 0]) * (m[:, 3] - m[:, 1]) - inter)
    iou = inter / union
    value = float(iou.sum() / len(reference))
    if return_pairs:
        return value, list(zip(range(len(reference)), k.tolist(), iou.tolist()))
    return value


def box_iou_summary(truth_defects: dict, pred_defects: dict) -> dict:
    """Per defect class Box_p, Box_r, Box_a plus a ``macro`` entry.

    Inputs map class -> area-filtered defects. The macro average runs over
    classes present in truth with a defined value.
    """
    out = {}
    for c in DEFECT_CLASSES:
        t = list(truth_defects.get(c, []))
        p = list(pred_defects.get(c, []))
        box_r = match_and_box_iou(t, p)
        box_p = match_and_box_iou(p, t)
        out[c.label] = {"box_p": box_p, "box_r": box_r, "box_a": (box_p + box_r) / 2,
                        "n_truth": len(t), "n_pred": len(p)}
    macro = {}
    for key in ("box_p", "box_r", "box_a"):
        vals = [out[c.label][key] for c in DEFECT_CLASSES
                if out[c.label]["n_truth"] > 0 and not math.isnan(out[c.label][key])]
        macro[key] = float(np.mean(vals)) if vals else math.nan
    out["macro"] = macro
    return out


def with_boundary_flags(defects, flags) -> list[Defect]:
    return [replace(d, on_boundary=bool(f)) for d, f in zip(defects, flags)]
