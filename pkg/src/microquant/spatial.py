"""Ripley's K/H functions with translation edge correction and Monte-Carlo envelopes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, InsufficientPoints

CORRECTIONS = ("translation", "none")
CLUSTERED, DISPERSED, NEITHER = "clustered", "dispersed", "neither"
N_RADII = 64


@dataclass(frozen=True, eq=False)
class PointPattern:
    """Points in the half-open window [0, W) x [0, H), micrometres."""

    x: np.ndarray
    y: np.ndarray
    width: float
    height: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).ravel()
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if x.shape != y.shape:
            raise DataError("x and y must have the same length")
        if not (self.width > 0 and self.height > 0):
            raise DataError("window must have positive size")
        if x.size and ((x < 0).any() or (x >= self.width).any() or (y < 0).any() or (y >= self.height).any()):
            raise DataError("points must lie inside the window")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_points(cls, points, width, height):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return cls(p[:, 0], p[:, 1], width, height)

    @property
    def n(self) -> int:
        return int(self.x.size)

    @property
    def area(self) -> float:
        return self.width * self.height

    def scaled(self, s: float) -> "PointPattern":
        return PointPattern(self.x * s, self.y * s, self.width * s, self.height * s)


def translation_weight(dx, dy, width, height, correction="translation"):
    if correction == "none":
        return np.ones_like(np.asarray(dx, dtype=float)) if np.ndim(dx) else 1.0
    dx, dy = np.abs(dx), np.abs(dy)
    if np.any(dx >= width) or np.any(dy >= height):
        raise DataError("pair offset must be smaller than the window")
    return width * height / ((width - dx) * (height - dy))


def _check(radii, correction):
    if correction not in CORRECTIONS:
        raise DataError(f"correction must be one of {CORRECTIONS}")
    r = np.asarray(radii, dtype=np.float64).ravel()
    if r.size and ((r < 0).any() or (np.diff(r) < 0).any()):
        raise DataError("radii must be non-negative and ascending")
    return r


def ripley_k_univariate(pattern: PointPattern, radii, correction="translation") -> np.ndarray:
    r = _check(radii, correction)
    n = pattern.n
    if n < 2:
        raise InsufficientPoints(f"univariate K needs at least 2 points, got {n}")
    s = kernels.pair_sums(pattern.x, pattern.y, pattern.x, pattern.y, r,
                          pattern.width, pattern.height, correction == "translation", True)
    return pattern.area * s / (n * (n - 1))


def ripley_k_bivariate(pi: PointPattern, pj: PointPattern, radii, correction="translation") -> np.ndarray:
    r = _check(radii, correction)
    if pi.n < 1 or pj.n < 1:
        raise InsufficientPoints("bivariate K needs at least one point in each pattern")
    if (pi.width, pi.height) != (pj.width, pj.height):
        raise DataError("patterns must share a window")
    s = kernels.pair_sums(pi.x, pi.y, pj.x, pj.y, r, pi.width, pi.height, correction == "translation", False)
    return pi.area * s / (pi.n * pj.n)


def h_transform(k_values, radii) -> np.ndarray:
    k = np.asarray(k_values, dtype=np.float64)
    if (k < 0).any():
        raise DataError("K must be non-negative")
    return np.sqrt(k / np.pi) - np.asarray(radii, dtype=np.float64)


def default_radii(width: float, height: float, n: int = N_RADII) -> np.ndarray:
    return np.linspace(0.0, 0.25 * min(width, height), n)


def gen_csr(n: int, width: float, height: float, seed=0) -> PointPattern:
    rng = np.random.default_rng(seed)
    return PointPattern(rng.uniform(0, width, n), rng.uniform(0, height, n), width, height)


def gen_thomas(n_parents: int, mean_children: float, sigma: float, width: float, height: float,
               seed=0) -> PointPattern:
    """Thomas cluster process: uniform parents, Poisson(mean) Gaussian-displaced children.

    Children falling outside the window are redrawn around the same parent.
    """
    if n_parents < 0 or mean_children < 0 or sigma <= 0:
        raise DataError("invalid Thomas process parameters")
    rng = np.random.default_rng(seed)
    px = rng.uniform(0, width, n_parents)
    py = rng.uniform(0, height, n_parents)
    counts = rng.poisson(mean_children, n_parents)
    cx = np.repeat(px, counts)
    cy = np.repeat(py, counts)
    x = cx + rng.normal(0, sigma, cx.size)
    y = cy + rng.normal(0, sigma, cy.size)
    bad = (x < 0) | (x >= width) | (y < 0) | (y >= height)
    while bad.any():
        m = int(bad.sum())
        x[bad] = cx[bad] + rng.normal(0, sigma, m)
        y[bad] = cy[bad] + rng.normal(0, sigma, m)
        bad = (x < 0) | (x >= width) | (y < 0) | (y >= height)
    return PointPattern(x, y, width, height)


def mc_envelope(counts, width: float, height: float, radii, sims: int = 1000, quantile: float = 0.99,
                seed: int = 0, correction="translation"):
    """Pointwise (1 - q, q) quantiles of H over ``sims`` CSR simulations.

    ``counts`` is n for the univariate case or (n_i, n_j) for the bivariate
    one. Simulation s draws from ``default_rng(seed ^ s)``.
    """
    if sims < 1:
        raise DataError("sims must be >= 1")
    if not 0.5 <= quantile < 1:
        raise DataError("quantile must be in [0.5, 1)")
    r = _check(radii, correction)
    biv = np.ndim(counts) > 0
    hs = np.empty((sims, r.size))
    for s in range(sims):
        rng = np.random.default_rng(seed ^ s)
        if biv:
            ni, nj = counts
            a = PointPattern(rng.uniform(0, width, ni), rng.uniform(0, height, ni), width, height)
            b = PointPattern(rng.uniform(0, width, nj), rng.uniform(0, height, nj), width, height)
            k = ripley_k_bivariate(a, b, r, correction)
        else:
            a = PointPattern(rng.uniform(0, width, counts), rng.uniform(0, height, counts), width, height)
            k = ripley_k_univariate(a, r, correction)
        hs[s] = h_transform(k, r)
    return np.percentile(hs, 100 * (1 - quantile), axis=0), np.percentile(hs, 100 * quantile, axis=0)


def classify_curve(h_values, env_lo, env_hi) -> np.ndarray:
    h = np.asarray(h_values, dtype=float)
    lo = np.asarray(env_lo, dtype=float)
    hi = np.asarray(env_hi, dtype=float)
    if not h.shape == lo.shape == hi.shape:
        raise DataError("H values and envelope must be aligned")
    out = np.full(h.shape, NEITHER, dtype=object)
    out[h > hi] = CLUSTERED
    out[h < lo] = DISPERSED
    return out


@dataclass(frozen=True, eq=False)
class RipleyCurve:
    label: str
    radii: np.ndarray
    k_values: np.ndarray
    h_values: np.ndarray
    env_lo: np.ndarray
    env_hi: np.ndarray
    verdicts: np.ndarray

    def rows(self):
        for i in range(self.radii.size):
            yield {"combination": self.label, "radius_um": float(self.radii[i]),
                   "k": float(self.k_values[i]), "h": float(self.h_values[i]),
                   "env_lo": float(self.env_lo[i]), "env_hi": float(self.env_hi[i]),
                   "verdict": str(self.verdicts[i])}


def ripley_curve(pi: PointPattern, pj: PointPattern | None = None, radii=None, sims: int = 1000,
                 quantile: float = 0.99, seed: int = 0, correction="translation", label="") -> RipleyCurve:
    """K, H, envelope and verdicts for one pattern (or a pair of patterns)."""
    if radii is None:
        radii = default_radii(pi.width, pi.height)
    r = _check(radii, correction)
    if pj is None:
        k = ripley_k_univariate(pi, r, correction)
        lo, hi = mc_envelope(pi.n, pi.width, pi.height, r, sims, quantile, seed, correction)
    else:
        k = ripley_k_bivariate(pi, pj, r, correction)
        lo, hi = mc_envelope((pi.n, pj.n), pi.width, pi.height, r, sims, quantile, seed, correction)
    h = h_transform(k, r)
    return RipleyCurve(label, r, k, h, lo, hi, classify_curve(h, lo, hi))


def clustered_fraction(curve: RipleyCurve, r_min: float, r_max: float) -> float:
    sel = (curve.radii >= r_min) & (curve.radii <= r_max)
    if not sel.any():
        return math.nan
    return float(np.mean(curve.verdicts[sel] == CLUSTERED))
