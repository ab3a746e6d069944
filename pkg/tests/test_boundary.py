import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import normal_two_sided_p
from microquant.boundary import (HoughParams, LineSegment, detect_boundary_lines, extend_to_frame,
                                 mark_on_boundary, one_sample_prop_test, proportion_ci_half_width,
                                 proportion_summary, two_sample_prop_test)
from microquant.defects import Defect
from microquant.errors import DataError
from microquant.raster import ClassId


def _angle_close(a, b, tol=1.0):
    d = abs(a - b) % 180
    return min(d, 180 - d) <= tol


def test_empty_mask_no_segments():
    assert detect_boundary_lines(np.zeros((50, 50), bool)) == []


def test_vertical_line_recovered():
    m = np.zeros((120, 120), bool)
    m[10:110, 60] = True
    segs = detect_boundary_lines(m)
    assert segs and any(_angle_close(s.angle_deg, 90) for s in segs)


def test_perpendicular_lines_recovered():
    m = np.zeros((100, 100), bool)
    m[:, 40] = True
    m[60, :] = True
    segs = detect_boundary_lines(m)
    assert len(segs) >= 2
    assert any(_angle_close(s.angle_deg, 90) for s in segs)
    assert any(_angle_close(s.angle_deg, 0) for s in segs)


def test_diagonal_line_orientation_matches_accumulator_peak():
    m = np.zeros((100, 100), bool)
    xs = np.arange(100)
    ys = np.floor(0.5 * xs + 20 + 0.5).astype(int)
    m[ys, xs] = True
    segs = detect_boundary_lines(m)
    want = math.degrees(math.atan(0.5))
    assert any(_angle_close(s.angle_deg, want, 1.0) for s in segs)


def test_hough_deterministic_for_seed(rng):
    m = rng.random((80, 80)) < 0.02
    m[:, 30] = True
    m[10, :] = True
    assert detect_boundary_lines(m, seed=3) == detect_boundary_lines(m, seed=3)


def test_hough_params_positive():
    with pytest.raises(DataError):
        HoughParams(threshold=0)


def test_extend_horizontal():
    t = extend_to_frame(LineSegment(10, 10, 20, 10), 100, 100)
    assert t[:, 0].tolist() == list(range(100)) and (t[:, 1] == 10).all()


def test_extend_diagonal():
    t = extend_to_frame(LineSegment(0, 0, 1, 1), 4, 4)
    assert t.tolist() == [[0, 0], [1, 1], [2, 2], [3, 3]]


def test_extend_zero_length():
    with pytest.raises(DataError):
        extend_to_frame(LineSegment(3, 3, 3, 3), 10, 10)


@given(st.integers(0, 59), st.integers(0, 39), st.integers(0, 59), st.integers(0, 39))
def test_extended_trace_ends_on_frame(x1, y1, x2, y2):
    if (x1, y1) == (x2, y2):
        return
    w, h = 60, 40
    t = extend_to_frame(LineSegment(x1, y1, x2, y2), w, h)
    assert len(t) >= 1
    for x, y in (t[0], t[-1]):
        assert x in (0, w - 1) or y in (0, h - 1)
    assert ((t[:, 0] >= 0) & (t[:, 0] < w) & (t[:, 1] >= 0) & (t[:, 1] < h)).all()


def _blob(x, y, r=1):
    yy, xx = np.mgrid[y - r:y + r + 1, x - r:x + r + 1]
    return Defect(ClassId.VOID, yy.ravel(), xx.ravel(), 1.0)


def test_mark_on_boundary_cases():
    shape = (50, 50)
    trace = extend_to_frame(LineSegment(0, 25, 10, 25), 50, 50)
    on, off, stub = _blob(20, 25), _blob(10, 5), _blob(40, 45)
    raw = np.zeros(shape, bool)
    raw[45, 42] = True  # touches stub after 1-px dilation
    flags = [d.on_boundary for d in mark_on_boundary([on, off, stub], [trace], raw)]
    assert flags == [True, False, True]


def test_mark_on_boundary_matches_point_set_oracle(rng):
    shape = (40, 40)
    for _ in range(20):
        defs = [_blob(int(x), int(y)) for x, y in rng.integers(2, 38, (6, 2))]
        raw = rng.random(shape) < 0.01
        seg = LineSegment(*map(int, rng.integers(0, 40, 4)))
        traces = [] if (seg.x1, seg.y1) == (seg.x2, seg.y2) else [extend_to_frame(seg, 40, 40)]
        target = {(int(x), int(y)) for t in traces for x, y in t} | {(int(x), int(y)) for y, x in zip(*np.nonzero(raw))}
        got = [d.on_boundary for d in mark_on_boundary(defs, traces, raw)]
        for d, g in zip(defs, got):
            want = any((x + dx, y + dy) in target for x, y in d.pixel_set() for dx in (-1, 0, 1) for dy in (-1, 0, 1))
            assert g == want


def test_mark_on_boundary_monotone(rng):
    defs = [_blob(int(x), int(y)) for x, y in rng.integers(2, 38, (10, 2))]
    raw = np.zeros((40, 40), bool)
    t1 = extend_to_frame(LineSegment(0, 0, 39, 20), 40, 40)
    t2 = extend_to_frame(LineSegment(5, 0, 6, 39), 40, 40)
    a = [d.on_boundary for d in mark_on_boundary(defs, [t1], raw)]
    b = [d.on_boundary for d in mark_on_boundary(defs, [t1, t2], raw)]
    assert all(y or not x for x, y in zip(a, b))


def test_ci_half_width_reference_values():
    assert proportion_ci_half_width(0.6, 30) == pytest.approx(0.175, abs=0.001)
    assert proportion_ci_half_width(0.729, 573) == pytest.approx(0.036, abs=0.001)
    assert proportion_ci_half_width(0.0, 17) == 0
    with pytest.raises(DataError):
        proportion_ci_half_width(0.5, 0)


def test_one_sample_examples():
    r = one_sample_prop_test(15, 30)
    assert r.z == 0 and r.p_value == 1.0 and not r.significant
    r = one_sample_prop_test(18, 30)
    assert r.z == pytest.approx(0.9129, abs=1e-4) and r.p_value == pytest.approx(0.3613, abs=1e-4)
    assert r.p_value == pytest.approx(normal_two_sided_p(r.z), abs=1e-8)
    r = one_sample_prop_test(18, 30, continuity=False)
    assert r.z == pytest.approx(1.0954, abs=1e-4) and r.p_value == pytest.approx(0.2733, abs=1e-4)
    assert r.n_on + r.n_in == r.N and r.proportion == 0.6


def test_two_sample_reference_values():
    assert two_sample_prop_test(12, 30, 145, 459) == pytest.approx(0.451, abs=0.001)
    assert two_sample_prop_test(6, 8, 165, 493) == pytest.approx(0.037, abs=0.001)
    assert two_sample_prop_test(3, 10, 30, 100, continuity=False) == 1.0
    assert two_sample_prop_test(0, 10, 0, 20) == 1.0
    assert two_sample_prop_test(10, 10, 20, 20) == 1.0


def test_two_sample_z_matches_hand_value():
    # Yates-corrected z for the impurity rows, recomputed by hand
    p1, p2, pooled = 12 / 30, 145 / 459, 157 / 489
    z = (abs(p1 - p2) - 0.5 * (1 / 30 + 1 / 459)) / math.sqrt(pooled * (1 - pooled) * (1 / 30 + 1 / 459))
    assert z == pytest.approx(0.7541, abs=1e-4)
    assert two_sample_prop_test(12, 30, 145, 459) == pytest.approx(normal_two_sided_p(z), abs=1e-8)


@given(st.integers(1, 500).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))))
def test_one_sample_symmetry(nN):
    n, k = nN
    a, b = one_sample_prop_test(k, n), one_sample_prop_test(n - k, n)
    assert a.p_value == pytest.approx(b.p_value, abs=1e-15)
    assert 0 < a.p_value <= 1


@given(st.integers(1, 200), st.integers(1, 200), st.data())
def test_two_sample_symmetry(N1, N2, data):
    n1 = data.draw(st.integers(0, N1))
    n2 = data.draw(st.integers(0, N2))
    p = two_sample_prop_test(n1, N1, n2, N2)
    assert p == pytest.approx(two_sample_prop_test(n2, N2, n1, N1), abs=1e-15)
    assert 0 <= p <= 1


def test_proportion_summary():
    mean, std, ci = proportion_summary([0.2, 0.4])
    assert mean == pytest.approx(0.3) and std == pytest.approx(0.1414, abs=1e-4) and ci == pytest.approx(0.196, abs=1e-4)
    one = proportion_summary([0.5])
    assert one[0] == 0.5 and math.isnan(one[1]) and math.isnan(one[2])
    # std 0.004 over three images rounds to a 0.005 half-width
    assert round(1.96 * 0.004 / math.sqrt(3), 3) == 0.005
    _, _, ci = proportion_summary([0.1, 0.104, 0.096])
    assert round(ci, 3) == 0.005
    with pytest.raises(DataError):
        proportion_summary([])
