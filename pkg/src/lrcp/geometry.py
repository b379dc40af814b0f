"""Space-time box algebra: boxes, boundary shells, seed sets, separation.

Boxes are per-coordinate cubes, optionally tilted (the spatial center moves
linearly in time) and optionally restricted to the positive orthant.  All
membership inequalities are inclusive for boxes and strict for directed face
conditions; time intervals are closed, [0, height].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

__all__ = ["SpaceTimeBox", "Shell", "SeedSet", "separated", "box"]


def _as_tuple(value, d: int) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),) * d
    out = tuple(float(v) for v in value)
    if len(out) != d:
        raise ValueError(f"expected {d} coordinates, got {len(out)}")
    return out


@dataclass(frozen=True)
class SpaceTimeBox:
    """Sites x with |x_i - t * tilt_i| <= half_widths_i for t in [0, height]."""

    half_widths: tuple[float, ...]
    height: float
    tilt: tuple[float, ...] = ()
    positive_orthant: bool = False

    def __post_init__(self):
        if not self.half_widths:
            raise ValueError("box needs at least one spatial dimension")
        if any(w < 0 for w in self.half_widths):
            raise ValueError("half widths must be nonnegative")
        if self.height < 0:
            raise ValueError("height must be nonnegative")
        if not self.tilt:
            object.__setattr__(self, "tilt", (0.0,) * len(self.half_widths))
        elif len(self.tilt) != len(self.half_widths):
            raise ValueError("tilt and half_widths dimensions differ")

    @property
    def dimension(self) -> int:
        return len(self.half_widths)

    def contains(self, x, t: float) -> bool:
        if len(x) != self.dimension:
            raise ValueError(
                f"point has {len(x)} coordinates, box dimension is {self.dimension}"
            )
        if not (0.0 <= t <= self.height):
            return False
        for xi, wi, vi in zip(x, self.half_widths, self.tilt):
            if abs(xi - t * vi) > wi:
                return False
            if self.positive_orthant and xi < 0:
                return False
        return True

    def grow(self, widths) -> "SpaceTimeBox":
        """Box with half widths enlarged by `widths`, same height/tilt/orthant."""
        extra = _as_tuple(widths, self.dimension)
        return SpaceTimeBox(
            tuple(w + e for w, e in zip(self.half_widths, extra)),
            self.height,
            self.tilt,
            self.positive_orthant,
        )

    def bounding_ranges(self) -> list[tuple[int, int]]:
        """Integer coordinate ranges covering the box over its whole lifetime."""
        out = []
        for wi, vi in zip(self.half_widths, self.tilt):
            lo = -wi + min(0.0, vi * self.height)
            hi = wi + max(0.0, vi * self.height)
            if self.positive_orthant:
                lo = max(lo, 0.0)
            out.append((math.ceil(lo), math.floor(hi)))
        return out

    def section_ranges(self, t: float) -> list[tuple[int, int]]:
        """Integer coordinate ranges of the spatial section at time t."""
        out = []
        for wi, vi in zip(self.half_widths, self.tilt):
            lo = t * vi - wi
            hi = t * vi + wi
            if self.positive_orthant:
                lo = max(lo, 0.0)
            out.append((math.ceil(lo), math.floor(hi)))
        return out

    def sites_at(self, t: float):
        """All lattice points of the section at time t (small boxes only)."""
        ranges = self.section_ranges(t)
        if any(lo > hi for lo, hi in ranges):
            return
        yield from itertools.product(*(range(lo, hi + 1) for lo, hi in ranges))


def box(half_width, height, dimension=None, tilt=None, positive_orthant=False):
    """Convenience constructor; scalar half_width/tilt broadcast over dimension."""
    if dimension is None:
        if isinstance(half_width, (int, float)):
            raise ValueError("dimension required with scalar half_width")
        dimension = len(half_width)
    widths = _as_tuple(half_width, dimension)
    tilts = _as_tuple(tilt, dimension) if tilt is not None else (0.0,) * dimension
    return SpaceTimeBox(widths, float(height), tilts, positive_orthant)


@dataclass(frozen=True)
class Shell:
    """Outer-minus-inner box layer, optionally restricted to one directed face.

    face is None (whole shell), (axis, "+") / (axis, "-") for axis-aligned
    directed faces (strict inequality against the inner half width), or
    ("tilt", "+") / ("tilt", "-") for the moving-boundary faces in the last
    coordinate of a tilted box.
    """

    inner: SpaceTimeBox
    widths: tuple[float, ...] = field()
    face: tuple | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "widths", _as_tuple(self.widths, self.inner.dimension)
        )
        if any(w < 0 for w in self.widths):
            raise ValueError("shell widths must be nonnegative")
        if self.face is not None:
            kind, sign = self.face
            if sign not in ("+", "-"):
                raise ValueError(f"face sign must be '+' or '-', got {sign!r}")
            if kind != "tilt" and not (
                isinstance(kind, int) and 0 <= kind < self.inner.dimension
            ):
                raise ValueError(f"bad face axis {kind!r}")

    @property
    def outer(self) -> SpaceTimeBox:
        return self.inner.grow(self.widths)

    def _face_ok(self, x, t: float) -> bool:
        if self.face is None:
            return True
        kind, sign = self.face
        if kind == "tilt":
            d = self.inner.dimension - 1
            lo = self.inner.half_widths[d] + self.inner.tilt[d] * t
            hi = lo + self.widths[d]
            v = x[d] if sign == "+" else -x[d]
            return lo <= v <= hi
        w = self.inner.half_widths[kind]
        return x[kind] > w if sign == "+" else x[kind] < -w

    def membership(self, x, t: float) -> bool:
        return (
            self.outer.contains(x, t)
            and not self.inner.contains(x, t)
            and self._face_ok(x, t)
        )

    def membership_intervals(self, x) -> list[tuple[float, float]]:
        """Closures of the time intervals during which x belongs to the shell.

        Computed as (outer ∧ face) minus inner, clipped to [0, height].
        Interval endpoints may graze the excluded inner box; such boundary
        instants carry no probability mass for the event machinery built on
        these intervals.
        """
        base = _box_interval(self.outer, x)
        if base is None:
            return []
        lo, hi = base
        if self.face is not None:
            kind, sign = self.face
            if kind == "tilt":
                d = self.inner.dimension - 1
                a = self.inner.half_widths[d]
                b = a + self.widths[d]
                xd = x[d] if sign == "+" else -x[d]
                # face condition reads a <= xd - t * tilt <= b for either sign
                piece = _linear_band_interval(xd, self.inner.tilt[d], a, b)
                if piece is None:
                    return []
                lo, hi = max(lo, piece[0]), min(hi, piece[1])
            else:
                if not self._face_ok(x, 0.0):  # axis faces are time independent
                    return []
        if lo > hi:
            return []
        inner_iv = _box_interval(self.inner, x)
        if inner_iv is None:
            return [(lo, hi)]
        ilo, ihi = inner_iv
        out = []
        if lo < ilo:
            out.append((lo, ilo))
        if ihi < hi:
            out.append((ihi, hi))
        return out


def _linear_band_interval(value, slope, lo_band, hi_band):
    """Times t with lo_band <= value - t*slope <= hi_band, or None."""
    if slope == 0:
        return (-math.inf, math.inf) if lo_band <= value <= hi_band else None
    t1 = (value - hi_band) / slope
    t2 = (value - lo_band) / slope
    return (min(t1, t2), max(t1, t2))


def _box_interval(b: SpaceTimeBox, x):
    """Closed time interval with x inside box b, or None."""
    if b.positive_orthant and any(c < 0 for c in x):
        return None
    lo, hi = 0.0, b.height
    for xi, wi, vi in zip(x, b.half_widths, b.tilt):
        piece = _linear_band_interval(xi, vi, -wi, wi)
        if piece is None:
            return None
        lo, hi = max(lo, piece[0]), min(hi, piece[1])
    return (lo, hi) if lo <= hi else None


@dataclass(frozen=True)
class SeedSet:
    """Finite, nonempty initial infected set."""

    offsets: frozenset

    def __post_init__(self):
        pts = frozenset(tuple(int(c) for c in p) for p in self.offsets)
        if not pts:
            raise ValueError("seed set must be nonempty")
        dims = {len(p) for p in pts}
        if len(dims) != 1:
            raise ValueError("seed set points have mixed dimensions")
        object.__setattr__(self, "offsets", pts)

    @property
    def dimension(self) -> int:
        return len(next(iter(self.offsets)))

    @property
    def radius(self) -> int:
        """Smallest m with the set inside the cube of half width m."""
        return max(abs(c) for p in self.offsets for c in p)

    def translate(self, x) -> "SeedSet":
        xs = tuple(int(c) for c in x)
        return SeedSet(frozenset(tuple(a + b for a, b in zip(p, xs)) for p in self.offsets))

    def __len__(self) -> int:
        return len(self.offsets)

    def __iter__(self):
        return iter(sorted(self.offsets))

    @staticmethod
    def origin(dimension: int) -> "SeedSet":
        return SeedSet(frozenset({(0,) * dimension}))

    @staticmethod
    def cube(dimension: int, radius: int) -> "SeedSet":
        rng = range(-radius, radius + 1)
        return SeedSet(frozenset(itertools.product(rng, repeat=dimension)))


def separated(p, q, n: int) -> bool:
    """True iff the two space-time points are far apart in time or space.

    Far apart: time gap exceeds 1, or sup-norm distance at least 2n + 1.
    """
    (x, s), (y, t) = p, q
    if abs(s - t) > 1.0:
        return True
    return max(abs(a - b) for a, b in zip(x, y)) >= 2 * n + 1
