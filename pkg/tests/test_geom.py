import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctreach.geom import (
    Box, DimMismatch, DomainError, EmptyInput, GeomError, Interval, NegativeFactor,
    box_bloat, box_contains, box_hull, interval_add, interval_cos, interval_mul,
    interval_sin, interval_sqr, interval_sub, interval_tan, points_hull,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@st.composite
def intervals(draw, lo=-50.0, hi=50.0):
    a = draw(st.floats(lo, hi, allow_nan=False))
    b = draw(st.floats(lo, hi, allow_nan=False))
    return Interval(min(a, b), max(a, b))


def _samples(a: Interval, n=101):
    return np.linspace(a.lo, a.hi, n)


# -- examples ---------------------------------------------------------------

def test_add_examples():
    assert interval_add(Interval(0, 0), Interval(1, 2)).contains(Interval(1, 2))
    r = interval_add(Interval(0, 0), Interval(1, 2))
    assert r.lo == pytest.approx(1, abs=1e-11) and r.hi == pytest.approx(2, abs=1e-11)
    r = interval_add(Interval(-1, 1), Interval(-1, 1))
    assert r.contains(Interval(-2, 2)) and r.width < 4 + 1e-10
    r = interval_add(Interval(0.1, 0.2), Interval(0.3, 0.4))
    for x in (0.1, 0.2):
        for y in (0.3, 0.4):
            assert r.contains(x + y)


def test_sin_examples():
    r = interval_sin(Interval(0, 0))
    assert r.contains(0.0) and r.width < 1e-12
    r = interval_sin(Interval(-math.pi / 2, math.pi / 2))
    assert r.lo == pytest.approx(-1) and r.hi == pytest.approx(1)
    # +-10 deg; the quoted bound 0.17365 is given to 5 digits
    a = Interval(-math.radians(10), math.radians(10))
    r = interval_sin(a)
    oracle = np.sin(_samples(a, 10001))
    assert r.lo <= oracle.min() and r.hi >= oracle.max()
    assert r.lo >= oracle.min() - 1e-6 and r.hi <= oracle.max() + 1e-6
    assert abs(r.hi - 0.17365) < 5e-6 and abs(r.lo + 0.17365) < 5e-6


def test_tan_examples():
    r = interval_tan(Interval(0, 0))
    assert r.contains(0.0) and r.width < 1e-12
    r = interval_tan(Interval(math.pi / 4, math.pi / 4))
    assert r.lo <= 1.0 <= r.hi and r.width < 1e-11
    a = Interval(-0.2, 0.3)
    r = interval_tan(a)
    oracle = np.tan(_samples(a, 10001))
    assert r.lo <= oracle.min() and r.hi >= oracle.max()
    assert abs(r.lo + 0.20271) < 5e-6 and abs(r.hi - 0.30934) < 5e-6


def test_tan_guard():
    with pytest.raises(DomainError):
        interval_tan(Interval(0.0, math.pi / 2 - math.radians(4)))
    with pytest.raises(DomainError):
        interval_tan(Interval(-1.6, 0.0))


def test_hull_examples():
    b = Box.from_bounds([(0, 1), (2, 5)])
    assert box_hull([b]) == b
    h = box_hull([Box.from_bounds([(0, 1), (0, 1)]), Box.from_bounds([(2, 3), (0, 1)])])
    assert h == Box.from_bounds([(0, 3), (0, 1)])
    with pytest.raises(EmptyInput):
        box_hull([])
    with pytest.raises(DimMismatch):
        box_hull([Box.from_bounds([(0, 1)]), Box.from_bounds([(0, 1), (0, 1)])])


def test_bloat_examples():
    b = Box.from_bounds([(0, 2), (0, 2)])
    assert box_bloat(b, 0) == b
    assert box_bloat(b, 0.5) == Box.from_bounds([(-0.5, 2.5), (-0.5, 2.5)])
    with pytest.raises(NegativeFactor):
        box_bloat(b, -0.1)


def test_contains_examples():
    b = Box.from_bounds([(0, 1), (0, 1)])
    assert box_contains(b, b)
    assert not box_contains(b, Box.from_bounds([(0, 1.001), (0, 1)]))
    with pytest.raises(DimMismatch):
        box_contains(b, Box.from_bounds([(0, 1)]))


def test_interval_rejects_inverted_and_nan():
    with pytest.raises(GeomError):
        Interval(1.0, 0.0)
    with pytest.raises(GeomError):
        Interval(float("nan"), 0.0)


def test_points_hull():
    pts = np.array([[0.0, 1.0], [2.0, -1.0], [1.0, 0.5]])
    assert points_hull(pts) == Box.from_bounds([(0, 2), (-1, 1)])


def test_box_corners_and_intersect():
    b = Box.from_bounds([(0, 1), (2, 3)])
    assert {tuple(c) for c in b.corners()} == {(0, 2), (0, 3), (1, 2), (1, 3)}
    assert b.intersect(Box.from_bounds([(0.5, 4), (0, 2.5)])) == Box.from_bounds([(0.5, 1), (2, 2.5)])
    assert b.intersect(Box.from_bounds([(2, 4), (0, 9)])) is None


# -- properties -------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(intervals(), intervals())
def test_add_sub_mul_enclose_corners(a, b):
    for op, f in ((interval_add, lambda x, y: x + y), (interval_sub, lambda x, y: x - y),
                  (interval_mul, lambda x, y: x * y)):
        r = op(a, b)
        for x in (a.lo, a.mid, a.hi):
            for y in (b.lo, b.mid, b.hi):
                assert r.contains(f(x, y))


@settings(max_examples=200, deadline=None)
@given(intervals())
def test_sqr_encloses(a):
    r = interval_sqr(a)
    assert r.lo >= 0
    for x in _samples(a, 33):
        assert r.contains(x * x)


@settings(max_examples=300, deadline=None)
@given(intervals(-20, 20))
def test_sin_cos_enclose_dense_samples(a):
    s, c = interval_sin(a), interval_cos(a)
    xs = _samples(a, 2001)
    assert np.all(np.sin(xs) >= s.lo) and np.all(np.sin(xs) <= s.hi)
    assert np.all(np.cos(xs) >= c.lo) and np.all(np.cos(xs) <= c.hi)


@settings(max_examples=300, deadline=None)
@given(intervals(-1.4, 1.4))
def test_tan_encloses(a):
    r = interval_tan(a)
    xs = _samples(a, 501)
    assert np.all(np.tan(xs) >= r.lo) and np.all(np.tan(xs) <= r.hi)


@settings(max_examples=200, deadline=None)
@given(intervals(-3, 3), intervals(-3, 3))
def test_inclusion_monotone(a, b):
    """a ⊆ a' implies f(a) ⊆ f(a') for every operation."""
    outer = a.hull(b)
    assert interval_sin(outer).contains(interval_sin(a))
    assert interval_cos(outer).contains(interval_cos(a))
    assert interval_sqr(outer).contains(interval_sqr(a))
    assert interval_mul(outer, outer).contains(interval_mul(a, a))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(intervals(), intervals()), min_size=1, max_size=5),
       st.floats(0, 3, allow_nan=False))
def test_hull_and_bloat_contain_inputs(pairs, f):
    boxes = [Box((a, b)) for a, b in pairs]
    h = box_hull(boxes)
    assert all(box_contains(h, b) for b in boxes)
    bl = box_bloat(h, f)
    assert box_contains(bl, h)
    assert np.allclose(bl.widths, (1 + f) * h.widths, rtol=1e-9, atol=1e-9)
