"""Closed intervals and axis-aligned boxes.

Every arithmetic result is widened outward by a relative slack of
``SLACK`` (plus ``TINY`` absolute, to cover subnormal underflow) instead of
switching the FPU rounding mode.  IEEE-754 ``+ - * /`` are correctly rounded,
so half an ulp relative to the result is the worst error; ``SLACK`` covers
several thousand ulps, which also absorbs libm error in ``sin``/``cos``/``tan``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SLACK = 1e-12
TINY = 1e-300
TAN_GUARD = math.radians(5.0)

HALF_PI = 0.5 * math.pi
TWO_PI = 2.0 * math.pi


class GeomError(ValueError):
    pass


class EmptyInput(GeomError):
    pass


class NegativeFactor(GeomError):
    pass


class DimMismatch(GeomError):
    pass


class DomainError(GeomError):
    """Argument outside the domain where an interval extension is defined."""


def down(x: float) -> float:
    return x - SLACK * abs(x) - TINY


def up(x: float) -> float:
    return x + SLACK * abs(x) + TINY


@dataclass(frozen=True, slots=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise GeomError(f"inverted or NaN interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, x: float) -> Interval:
        return cls(x, x)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def contains(self, other: Interval | float) -> bool:
        if isinstance(other, Interval):
            return self.lo <= other.lo and other.hi <= self.hi
        return self.lo <= other <= self.hi

    def hull(self, other: Interval) -> Interval:
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def intersect(self, other: Interval) -> Interval | None:
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return Interval(lo, hi) if lo <= hi else None

    def widen(self, amount: float) -> Interval:
        return Interval(self.lo - amount, self.hi + amount)

    def __add__(self, other):
        return interval_add(self, _as_interval(other))

    __radd__ = __add__

    def __sub__(self, other):
        return interval_sub(self, _as_interval(other))

    def __rsub__(self, other):
        return interval_sub(_as_interval(other), self)

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other):
        return interval_mul(self, _as_interval(other))

    __rmul__ = __mul__

    def __repr__(self):
        return f"Interval({self.lo!r}, {self.hi!r})"


def _as_interval(x) -> Interval:
    if isinstance(x, Interval):
        return x
    return Interval(float(x), float(x))


def interval_add(a: Interval, b: Interval) -> Interval:
    return Interval(down(a.lo + b.lo), up(a.hi + b.hi))


def interval_sub(a: Interval, b: Interval) -> Interval:
    return Interval(down(a.lo - b.hi), up(a.hi - b.lo))


def interval_mul(a: Interval, b: Interval) -> Interval:
    c = (a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi)
    return Interval(down(min(c)), up(max(c)))


def interval_sqr(a: Interval) -> Interval:
    if a.lo >= 0.0:
        return Interval(max(0.0, down(a.lo * a.lo)), up(a.hi * a.hi))
    if a.hi <= 0.0:
        return Interval(max(0.0, down(a.hi * a.hi)), up(a.lo * a.lo))
    m = max(-a.lo, a.hi)
    return Interval(0.0, up(m * m))


def _crosses(a: Interval, phase: float) -> bool:
    """True if ``a`` may contain ``phase + 2k*pi`` for some integer k.

    Errs towards True near the boundary, which only widens the result.
    """
    k = math.ceil((a.lo - phase) / TWO_PI - 1e-9)
    return phase + k * TWO_PI <= a.hi + 1e-9


def interval_sin(a: Interval) -> Interval:
    if a.width >= TWO_PI:
        return Interval(-1.0, 1.0)
    s_lo, s_hi = math.sin(a.lo), math.sin(a.hi)
    lo, hi = down(min(s_lo, s_hi)), up(max(s_lo, s_hi))
    if _crosses(a, HALF_PI):
        hi = 1.0
    if _crosses(a, -HALF_PI):
        lo = -1.0
    return Interval(max(lo, -1.0), min(hi, 1.0))


def interval_cos(a: Interval) -> Interval:
    if a.width >= TWO_PI:
        return Interval(-1.0, 1.0)
    c_lo, c_hi = math.cos(a.lo), math.cos(a.hi)
    lo, hi = down(min(c_lo, c_hi)), up(max(c_lo, c_hi))
    if _crosses(a, 0.0):
        hi = 1.0
    if _crosses(a, math.pi):
        lo = -1.0
    return Interval(max(lo, -1.0), min(hi, 1.0))


def interval_tan(a: Interval, guard: float = TAN_GUARD) -> Interval:
    """Monotone enclosure of ``tan`` on ``(-pi/2 + guard, pi/2 - guard)``.

    Raises DomainError when ``a`` reaches the guard band, i.e. a steering
    command the bicycle model cannot represent.
    """
    limit = HALF_PI - guard
    if a.lo <= -limit or a.hi >= limit:
        raise DomainError(f"tan argument {a} outside +/-{limit:.6f} rad")
    return Interval(down(math.tan(a.lo)), up(math.tan(a.hi)))


@dataclass(frozen=True, slots=True)
class Box:
    dims: tuple[Interval, ...]

    def __post_init__(self):
        if not self.dims:
            raise EmptyInput("box needs at least one dimension")
        object.__setattr__(self, "dims", tuple(self.dims))

    @classmethod
    def from_bounds(cls, bounds: Iterable[Sequence[float]]) -> Box:
        return cls(tuple(Interval(float(lo), float(hi)) for lo, hi in bounds))

    @classmethod
    def from_arrays(cls, lo, hi) -> Box:
        return cls(tuple(Interval(float(a), float(b)) for a, b in zip(lo, hi)))

    @classmethod
    def point(cls, x: Sequence[float]) -> Box:
        return cls(tuple(Interval(float(v), float(v)) for v in x))

    def __len__(self):
        return len(self.dims)

    def __getitem__(self, i) -> Interval:
        return self.dims[i]

    def __iter__(self):
        return iter(self.dims)

    @property
    def lo(self) -> np.ndarray:
        return np.array([d.lo for d in self.dims])

    @property
    def hi(self) -> np.ndarray:
        return np.array([d.hi for d in self.dims])

    @property
    def center(self) -> np.ndarray:
        return np.array([d.mid for d in self.dims])

    @property
    def widths(self) -> np.ndarray:
        return np.array([d.width for d in self.dims])

    def bounds(self) -> list[tuple[float, float]]:
        return [(d.lo, d.hi) for d in self.dims]

    def corners(self) -> np.ndarray:
        grids = np.meshgrid(*[[d.lo, d.hi] for d in self.dims], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def contains_point(self, x: Sequence[float]) -> bool:
        return all(d.lo <= v <= d.hi for d, v in zip(self.dims, x))

    def intersect(self, other: Box) -> Box | None:
        _check_dims(self, other)
        out = []
        for a, b in zip(self.dims, other.dims):
            c = a.intersect(b)
            if c is None:
                return None
            out.append(c)
        return Box(tuple(out))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, len(self)))

    def __repr__(self):
        inner = " x ".join(f"[{d.lo:.6g}, {d.hi:.6g}]" for d in self.dims)
        return f"Box({inner})"


def _check_dims(a: Box, b: Box) -> None:
    if len(a) != len(b):
        raise DimMismatch(f"{len(a)}-d box vs {len(b)}-d box")


def box_hull(boxes: Sequence[Box]) -> Box:
    if not boxes:
        raise EmptyInput("hull of an empty list")
    first = boxes[0]
    for b in boxes[1:]:
        _check_dims(first, b)
    dims = []
    for k in range(len(first)):
        dims.append(Interval(min(b.dims[k].lo for b in boxes), max(b.dims[k].hi for b in boxes)))
    return Box(tuple(dims))


def points_hull(points: np.ndarray) -> Box:
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise EmptyInput("hull of no points")
    return Box.from_arrays(points.min(axis=0), points.max(axis=0))


def box_bloat(b: Box, factor: float) -> Box:
    """Scale every width by ``1 + factor`` about the box center."""
    if factor < 0:
        raise NegativeFactor(f"bloat factor {factor} < 0")
    if factor == 0:
        return b
    dims = []
    for d in b.dims:
        pad = 0.5 * factor * d.width
        dims.append(Interval(d.lo - pad, d.hi + pad))
    return Box(tuple(dims))


def box_contains(outer: Box, inner: Box) -> bool:
    _check_dims(outer, inner)
    return all(o.lo <= i.lo and i.hi <= o.hi for o, i in zip(outer.dims, inner.dims))
