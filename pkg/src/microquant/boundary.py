"""Boundary line extraction, on-boundary flags and proportion tests."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .defects import Z975, dilate, with_boundary_flags
from .errors import DataError
from .raster import ClassId, LabelMap

ALPHA = 0.05


@dataclass(frozen=True)
class HoughParams:
    rho: float = 1.0
    theta_deg: float = 1.0
    threshold: int = 50
    min_length: int = 30
    max_gap: int = 10

    def __post_init__(self):
        if min(self.rho, self.theta_deg, self.threshold, self.min_length, self.max_gap) <= 0:
            raise DataError("Hough parameters must be positive")


@dataclass(frozen=True)
class LineSegment:
    x1: int
    y1: int
    x2: int
    y2: int

    @property
    def angle_deg(self) -> float:
        """Undirected orientation in [0, 180); 0 is horizontal, 90 vertical."""
        return math.degrees(math.atan2(self.y2 - self.y1, self.x2 - self.x1)) % 180.0

    @property
    def length(self) -> float:
        return math.hypot(self.x2 - self.x1, self.y2 - self.y1)


def hough_tables(params: HoughParams):
    theta = math.radians(params.theta_deg)
    nang = int(np.floor(math.pi / theta + 0.5))
    ang = np.arange(nang) * theta
    return np.cos(ang) / params.rho, np.sin(ang) / params.rho


def detect_boundary_lines(mask, params: HoughParams = HoughParams(), seed: int = 0) -> list[LineSegment]:
    """Probabilistic Hough segments of a binary boundary mask.

    Foreground pixels are visited in a seeded random order; repeated calls
    with the same seed give identical segments.
    """
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise DataError("boundary mask must be 2-D")
    h, w = mask.shape
    fg = np.flatnonzero(mask)
    if fg.size == 0:
        return []
    order = fg[np.random.default_rng(seed).permutation(fg.size)]
    cos_t, sin_t = hough_tables(params)
    numrho = int(np.floor((2 * (w + h) + 1) / params.rho + 0.5))
    segs = kernels.hough_ppht(mask.view(np.uint8), order, cos_t, sin_t, numrho,
                              params.threshold, params.min_length, params.max_gap)
    return [LineSegment(*map(int, s)) for s in segs]


def extend_to_frame(seg: LineSegment, width: int, height: int) -> np.ndarray:
    """Rasterize the infinite line through ``seg`` across the image.

    Steps along the major axis one pixel at a time; returns an (n, 2) array
    of in-bounds ``(x, y)`` pixels.
    """
    dx, dy = seg.x2 - seg.x1, seg.y2 - seg.y1
    if dx == 0 and dy == 0:
        raise DataError("zero-length segment")
    if abs(dx) >= abs(dy):
        xs = np.arange(width)
        ys = np.floor(seg.y1 + (xs - seg.x1) * (dy / dx) + 0.5).astype(np.int64)
    else:
        ys = np.arange(height)
        xs = np.floor(seg.x1 + (ys - seg.y1) * (dx / dy) + 0.5).astype(np.int64)
    ok = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    return np.column_stack([xs[ok], ys[ok]])


def trace_raster(traces, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for t in traces:
        t = np.asarray(t)
        if t.size:
            out[t[:, 1], t[:, 0]] = True
    return out


def mark_on_boundary(defects, traces, boundary_mask):
    """Flag defects whose 1-px dilation touches a trace or a boundary pixel."""
    boundary_mask = np.asarray(boundary_mask, dtype=bool)
    target = trace_raster(traces, boundary_mask.shape) | boundary_mask
    # defect (+) 3x3 hits target  <=>  defect hits target (+) 3x3
    near = dilate(target, 1, 1)
    flags = [bool(near[d.ys, d.xs].any()) for d in defects]
    return with_boundary_flags(defects, flags)


def boundary_traces(labels: LabelMap, params: HoughParams = HoughParams(), seed: int = 0):
    """Hough segments of the boundary class and their frame-spanning traces."""
    segs = detect_boundary_lines(labels.mask(ClassId.BOUNDARY), params, seed)
    return segs, [extend_to_frame(s, labels.width, labels.height) for s in segs]


def _norm_sf2(z: float) -> float:
    # two-sided normal tail
    return math.erfc(z / math.sqrt(2.0))


def proportion_ci_half_width(p: float, n: int) -> float:
    if n < 1:
        raise DataError("N must be >= 1")
    if not 0 <= p <= 1:
        raise DataError("p must be in [0, 1]")
    return Z975 * math.sqrt(p * (1 - p) / n)


@dataclass(frozen=True)
class ProportionTestResult:
    n_on: int
    n_in: int
    N: int
    proportion: float
    ci_half_width: float
    z: float
    p_value: float
    significant: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def one_sample_prop_test(n_on: int, n: int, p0: float = 0.5, continuity: bool = True) -> ProportionTestResult:
    """Normal-approximation test of n_on/N against p0, two-sided."""
    if n < 1:
        raise DataError("N must be >= 1")
    if not 0 <= n_on <= n:
        raise DataError("n_on must be in [0, N]")
    if not 0 < p0 < 1:
        raise DataError("p0 must be in (0, 1)")
    cc = 0.5 if continuity else 0.0
    z = max(abs(n_on - n * p0) - cc, 0.0) / math.sqrt(n * p0 * (1 - p0))
    p = _norm_sf2(z)
    prop = n_on / n
    return ProportionTestResult(n_on, n - n_on, n, prop, proportion_ci_half_width(prop, n), z, p, p < ALPHA)


def two_sample_prop_test(n1: int, N1: int, n2: int, N2: int, continuity: bool = True) -> float:
    """Pooled two-proportion z test, two-sided p-value."""
    if N1 < 1 or N2 < 1:
        raise DataError("sample sizes must be >= 1")
    if not (0 <= n1 <= N1 and 0 <= n2 <= N2):
        raise DataError("counts must be within [0, N]")
    pooled = (n1 + n2) / (N1 + N2)
    if pooled in (0.0, 1.0):
        return 1.0
    inv = 1 / N1 + 1 / N2
    cc = 0.5 * inv if continuity else 0.0
    z = max(abs(n1 / N1 - n2 / N2) - cc, 0.0) / math.sqrt(pooled * (1 - pooled) * inv)
    return _norm_sf2(z)


def proportion_summary(values):
    """(mean, sample std, 1.96*std/sqrt(n)); std and CI are NaN for one value."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise DataError("no proportions to summarize")
    if v.size == 1:
        return float(v[0]), math.nan, math.nan
    std = float(v.std(ddof=1))
    return float(v.mean()), std, Z975 * std / math.sqrt(v.size)


def on_boundary_counts(defects) -> tuple[int, int]:
    defects = list(defects)
    n_on = sum(d.on_boundary for d in defects)
    return n_on, len(defects)
