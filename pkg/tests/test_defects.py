import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import box_iou_brute, flood_fill_components, rect_overlap
from microquant.defects import (AREA_THRESHOLD, AREA_THRESHOLD_LEGACY, AnalysisConfig, Defect, box_iou_summary,
                                cluster_defects, defect_stats, filter_by_area, match_and_box_iou, quantify)
from microquant.errors import DataError
from microquant.raster import ClassId, LabelMap

VOID = ClassId.VOID


def _map(points, shape=(10, 10), cls=VOID, pixel_size=1.0):
    px = np.zeros(shape, np.uint8)
    for x, y in points:
        px[y, x] = cls
    return LabelMap(px, pixel_size)


def _rect_defect(x0, y0, x1, y1, cls=VOID, pixel_size=1.0):
    yy, xx = np.mgrid[y0:y1, x0:x1]
    return Defect(cls, yy.ravel(), xx.ravel(), pixel_size)


def test_single_pixel_defect():
    (d,) = cluster_defects(_map([(5, 5)], pixel_size=0.1), VOID)
    assert d.area == pytest.approx(0.01)
    assert d.centroid == pytest.approx((0.55, 0.55))
    assert d.bbox == (5, 5, 6, 6)


def test_gap_two_merges_gap_four_splits():
    assert len(cluster_defects(_map([(0, 0), (2, 0)]), VOID)) == 1
    assert len(cluster_defects(_map([(0, 0), (4, 0)]), VOID)) == 2
    assert len(flood_fill_components([[1, 0, 1, 0, 0]])) == 1
    assert len(flood_fill_components([[1, 0, 0, 0, 1]])) == 2


def test_non_defect_class_rejected():
    with pytest.raises(DataError):
        cluster_defects(_map([]), ClassId.BOUNDARY)


def _as_sets(defects):
    return sorted(sorted(d.pixel_set()) for d in defects)


@settings(max_examples=100, deadline=None)
@given(arrays(np.bool_, (32, 32), elements=st.booleans()), st.sampled_from([0, 1]))
def test_matches_flood_fill_oracle(mask, hw):
    lm = LabelMap(np.where(mask, VOID, 0).astype(np.uint8))
    got = cluster_defects(lm, VOID, AnalysisConfig(kernel_half_width=hw))
    want = flood_fill_components(mask.tolist(), half_width=hw)
    assert _as_sets(got) == sorted(sorted(c) for c in want)
    # pixel sets partition the class mask
    union = set().union(*(d.pixel_set() for d in got)) if got else set()
    assert union == {(x, y) for y, x in zip(*np.nonzero(mask))}
    assert sum(d.n_pixels for d in got) == int(mask.sum())


def test_area_from_undilated_pixels():
    (d,) = cluster_defects(_map([(3, 3), (5, 3)], pixel_size=0.5), VOID)
    assert d.n_pixels == 2 and d.area == pytest.approx(2 * 0.25)
    assert d.bbox == (3, 3, 6, 4)


def test_filter_by_area_strict():
    defs = cluster_defects(_map([(1, 1), (5, 5), (6, 5)], pixel_size=0.1), VOID)
    assert len(filter_by_area(defs, 0)) == 2
    one_px = defs[0].area
    assert filter_by_area(defs, one_px) == [defs[1]]
    rng = np.random.default_rng(0)
    areas = rng.uniform(0, 0.01, 50)
    fake = [Defect(VOID, np.zeros(1, int), np.zeros(1, int), math.sqrt(a)) for a in areas]
    assert [d.area for d in filter_by_area(fake, 0.005)] == [d.area for d in fake if d.area > 0.005]
    with pytest.raises(DataError):
        filter_by_area(defs, -1)


def test_threshold_presets():
    assert AnalysisConfig().area_threshold == AREA_THRESHOLD == 0.001888
    assert AREA_THRESHOLD_LEGACY == 0.0087
    with pytest.raises(DataError):
        AnalysisConfig(area_threshold=-0.1)


def test_defect_stats():
    fake = [Defect(VOID, np.zeros(n, int), np.arange(n), 1.0) for n in (1, 2, 3)]
    st_ = defect_stats(fake, 4.0)
    assert st_.mean_area == 2 and st_.std_area == pytest.approx(1.0)
    assert st_.ci_half_width == pytest.approx(1.96 / math.sqrt(3), abs=1e-4)
    assert defect_stats(fake * 3 + [fake[0]], 4.0).density == 2.5
    one = defect_stats(fake[:1], 2.0)
    assert math.isnan(one.std_area) and math.isnan(one.ci_half_width) and one.density == 0.5
    empty = defect_stats([], 1.0)
    assert empty.n == 0 and math.isnan(empty.mean_area)
    with pytest.raises(DataError):
        defect_stats(fake, 0)


def test_box_iou_examples():
    a = _rect_defect(0, 0, 10, 10)
    b = _rect_defect(5, 0, 15, 10)
    assert match_and_box_iou([a], [b]) == pytest.approx(50 / 150)
    assert match_and_box_iou([a], [a]) == 1.0
    far = _rect_defect(40, 40, 42, 42)
    assert match_and_box_iou([a], [far]) == 0.0
    assert math.isnan(match_and_box_iou([a], []))


def test_nearest_tie_goes_to_first_candidate():
    ref = _rect_defect(10, 10, 12, 12)
    left, right = _rect_defect(6, 10, 8, 12), _rect_defect(14, 10, 16, 12)
    _, pairs = match_and_box_iou([ref], [right, left], return_pairs=True)
    assert pairs[0][1] == 0
    _, pairs = match_and_box_iou([ref], [left, right], return_pairs=True)
    assert pairs[0][1] == 0


def _random_defects(rng, n, size=60):
    out = []
    for _ in range(n):
        x0, y0 = rng.integers(0, size - 6, 2)
        w, h = rng.integers(1, 6, 2)
        keep = rng.random((h, w)) < 0.7
        keep[0, 0] = keep[-1, -1] = True
        yy, xx = np.nonzero(keep)
        out.append(Defect(VOID, yy + y0, xx + x0, 0.1))
    return out


def _brute(defs):
    return [(d.centroid, d.bbox_um) for d in defs]


def test_box_iou_matches_brute_force(rng):
    for _ in range(50):
        t = _random_defects(rng, int(rng.integers(1, 15)))
        p = _random_defects(rng, int(rng.integers(1, 15)))
        assert match_and_box_iou(t, p) == pytest.approx(box_iou_brute(_brute(t), _brute(p)), abs=1e-12)


def test_box_iou_translation_and_scale_invariance(rng):
    t = _random_defects(rng, 8)
    p = _random_defects(rng, 9)
    base = match_and_box_iou(t, p)
    shift = [Defect(d.cls, d.ys + 7, d.xs + 3, d.pixel_size) for d in t]
    shiftp = [Defect(d.cls, d.ys + 7, d.xs + 3, d.pixel_size) for d in p]
    assert match_and_box_iou(shift, shiftp) == base
    big_t = [Defect(d.cls, d.ys, d.xs, 2 * d.pixel_size) for d in t]
    big_p = [Defect(d.cls, d.ys, d.xs, 2 * d.pixel_size) for d in p]
    assert match_and_box_iou(big_t, big_p) == pytest.approx(base, abs=1e-12)
    assert big_t[0].area == pytest.approx(4 * t[0].area)


def test_box_iou_summary():
    px = np.zeros((40, 40), np.uint8)
    px[2:6, 2:6] = ClassId.VOID
    px[20:25, 10:12] = ClassId.PRECIPITATE
    lm = LabelMap(px, 0.05)
    q = quantify(lm)
    s = box_iou_summary(q, q)
    assert s["void"]["box_a"] == 1.0 and s["precipitate"]["box_a"] == 1.0
    assert math.isnan(s["impurity"]["box_a"])
    assert s["macro"] == {"box_p": 1.0, "box_r": 1.0, "box_a": 1.0}


def test_box_a_is_mean_of_p_and_r():
    assert (0.542 + 0.619) / 2 == pytest.approx(0.5805)
    assert (0.559 + 0.646) / 2 == pytest.approx(0.6025)


def test_rect_oracle_sanity():
    assert rect_overlap((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3)
