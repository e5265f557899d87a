"""Exact dyadic grid arithmetic.

A cell at level ``k`` with integer coordinates ``(ix, iy)`` is the half-open
square ``[ix 2^-k, (ix+1) 2^-k) x [iy 2^-k, (iy+1) 2^-k)``.  Every quantity in
this module is an ``int`` or a :class:`fractions.Fraction`; nothing here touches
floating point.

Levels are allowed to be negative internally (cells of side larger than one),
which keeps coarsening total even when a lemma asks for scales such as ``64 * 4^-j``
that exceed the unit.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Iterator

Window = tuple[Fraction, Fraction, Fraction, Fraction]
Point = tuple[Fraction, Fraction]

DEFAULT_WINDOW: Window = (Fraction(-4), Fraction(-4), Fraction(4), Fraction(4))
UNIT_WINDOW: Window = (Fraction(0), Fraction(0), Fraction(1), Fraction(1))


def as_fraction(x) -> Fraction:
    """Convert ints, Fractions, ``"p/q"`` strings and floats (exactly) to Fraction."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        x = x.strip()
        if x.startswith("2^"):
            return Fraction(2) ** int(x[2:])
        return Fraction(x)
    return Fraction(x)


def as_point(p) -> Point:
    return (as_fraction(p[0]), as_fraction(p[1]))


def as_window(w) -> Window:
    if w is None:
        return DEFAULT_WINDOW
    if len(w) == 2:
        lo, hi = as_fraction(w[0]), as_fraction(w[1])
        return (lo, lo, hi, hi)
    xlo, ylo, xhi, yhi = (as_fraction(v) for v in w)
    if not (xlo < xhi and ylo < yhi):
        raise ValueError(f"degenerate window {w!r}")
    return (xlo, ylo, xhi, yhi)


def is_dyadic_power(r) -> bool:
    r = as_fraction(r)
    if r <= 0:
        return False
    n, d = r.numerator, r.denominator
    return (n == 1 and d & (d - 1) == 0) or (d == 1 and n & (n - 1) == 0)


def scale_level(r) -> int:
    """Return ``j`` with ``r == 2**-j``; raise if ``r`` is not an exact power of two."""
    r = as_fraction(r)
    if not is_dyadic_power(r):
        raise ValueError(f"{r} is not a dyadic scale 2^-j")
    if r.numerator == 1:
        return r.denominator.bit_length() - 1
    return -(r.numerator.bit_length() - 1)


def level_scale(j: int) -> Fraction:
    return Fraction(1, 2**j) if j >= 0 else Fraction(2 ** (-j))


def dyadic_ceil_level(r) -> int:
    """Level of the smallest dyadic scale ``>= r``."""
    r = as_fraction(r)
    if r <= 0:
        raise ValueError("scale must be positive")
    j = 0
    while level_scale(j) < r:
        j -= 1
    while level_scale(j + 1) >= r:
        j += 1
    return j


def _floor_div(a: Fraction, b: Fraction) -> int:
    return math.floor(a / b)


@dataclass(frozen=True, order=True)
class DyadicCell:
    level: int
    ix: int
    iy: int

    @property
    def side(self) -> Fraction:
        return level_scale(self.level)

    @property
    def lower(self) -> Point:
        h = self.side
        return (self.ix * h, self.iy * h)

    @property
    def center(self) -> Point:
        h = self.side
        return ((2 * self.ix + 1) * h / 2, (2 * self.iy + 1) * h / 2)

    def children(self) -> list["DyadicCell"]:
        k, x, y = self.level + 1, 2 * self.ix, 2 * self.iy
        return [DyadicCell(k, x + a, y + b) for b in (0, 1) for a in (0, 1)]

    def parent(self, level: int | None = None) -> "DyadicCell":
        level = self.level - 1 if level is None else level
        shift = self.level - level
        if shift < 0:
            raise ValueError("parent level must be coarser")
        return DyadicCell(level, self.ix >> shift, self.iy >> shift)

    def contains(self, p) -> bool:
        px, py = as_point(p)
        h = self.side
        return self.ix * h <= px < (self.ix + 1) * h and self.iy * h <= py < (self.iy + 1) * h


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """Half-open interval ``[i 2^-k, (i+1) 2^-k)`` inside ``[0, 1)``, read as the circle."""

    level: int
    index: int

    def __post_init__(self):
        if self.level < 0 or not 0 <= self.index < 2**self.level:
            raise ValueError(f"interval ({self.level}, {self.index}) outside [0,1)")

    @property
    def length(self) -> Fraction:
        return Fraction(1, 2**self.level)

    @property
    def left(self) -> Fraction:
        return Fraction(self.index, 2**self.level)

    @property
    def right(self) -> Fraction:
        return Fraction(self.index + 1, 2**self.level)

    @property
    def midpoint(self) -> Fraction:
        return Fraction(2 * self.index + 1, 2 ** (self.level + 1))

    def parent(self, level: int) -> "DyadicInterval":
        return DyadicInterval(level, self.index >> (self.level - level))

    def children(self, level: int) -> list["DyadicInterval"]:
        shift = level - self.level
        base = self.index << shift
        return [DyadicInterval(level, base + t) for t in range(2**shift)]


@dataclass(frozen=True)
class ScaleLadder:
    """Scales ``Delta^j = 2^{-m j}`` for ``j = 0..N`` with ``delta = Delta^N``."""

    m: int
    N: int

    def __post_init__(self):
        if self.m < 1 or self.N < 1:
            raise ValueError("ladder needs m >= 1 and N >= 1")

    @property
    def Delta(self) -> Fraction:
        return Fraction(1, 2**self.m)

    @property
    def delta(self) -> Fraction:
        return Fraction(1, 2 ** (self.m * self.N))

    @property
    def scales(self) -> list[Fraction]:
        return [self.scale(j) for j in range(self.N + 1)]

    def scale(self, j: int) -> Fraction:
        return level_scale(self.m * j)

    def level(self, j: int) -> int:
        return self.m * j


@dataclass(frozen=True)
class GridSet:
    """Sorted, duplicate-free set of level-``k`` cells meeting a rectangular window."""

    level: int
    cells: tuple[tuple[int, int], ...] = ()
    window: Window = field(default=DEFAULT_WINDOW)

    def __post_init__(self):
        object.__setattr__(self, "window", as_window(self.window))
        cells = tuple(sorted({(int(a), int(b)) for a, b in self.cells}))
        object.__setattr__(self, "cells", cells)
        if cells:
            xlo, ylo, xhi, yhi = self._index_bounds()
            for ix, iy in (cells[0], cells[-1]):
                if not xlo <= ix <= xhi:
                    raise ValueError(f"cell {(ix, iy)} outside window {self.window}")
            ys = [c[1] for c in cells]
            if min(ys) < ylo or max(ys) > yhi:
                raise ValueError(f"cells outside window {self.window}")

    def _index_bounds(self) -> tuple[int, int, int, int]:
        # index range of cells meeting the half-open window
        h = self.side
        xlo, ylo, xhi, yhi = self.window
        return (
            math.floor(xlo / h),
            math.floor(ylo / h),
            math.ceil(xhi / h) - 1,
            math.ceil(yhi / h) - 1,
        )

    @classmethod
    def from_cells(cls, level: int, cells: Iterable, window=None) -> "GridSet":
        return cls(level, tuple(cells), as_window(window))

    @classmethod
    def full(cls, level: int, window=UNIT_WINDOW) -> "GridSet":
        """All level-``level`` cells of the window (which must be grid aligned)."""
        w = as_window(window)
        g = cls(level, (), w)
        x0, y0, x1, y1 = g._index_bounds()
        return cls(level, [(i, j) for i in range(x0, x1 + 1) for j in range(y0, y1 + 1)], w)

    @cached_property
    def cellset(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.cells)

    @property
    def side(self) -> Fraction:
        return level_scale(self.level)

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self.cells)

    def __contains__(self, c) -> bool:
        if isinstance(c, DyadicCell):
            return c.level == self.level and (c.ix, c.iy) in self.cellset
        return tuple(c) in self.cellset

    def dyadic_cells(self) -> list[DyadicCell]:
        return [DyadicCell(self.level, a, b) for a, b in self.cells]

    def center(self, cell) -> Point:
        h = self.side
        return ((2 * cell[0] + 1) * h / 2, (2 * cell[1] + 1) * h / 2)

    def centers(self) -> list[Point]:
        return [self.center(c) for c in self.cells]

    def locate(self, p) -> tuple[int, int]:
        px, py = as_point(p)
        h = self.side
        return (_floor_div(px, h), _floor_div(py, h))

    def coarsen(self, level: int) -> "GridSet":
        if level > self.level:
            raise ValueError(f"cannot coarsen level {self.level} to finer level {level}")
        if level == self.level:
            return self
        s = self.level - level
        return GridSet(level, {(a >> s, b >> s) for a, b in self.cells}, self.window)

    def refine(self, level: int) -> "GridSet":
        """Same point set described by descendant cells at a finer level."""
        if level < self.level:
            raise ValueError("refine needs a finer level")
        s = level - self.level
        n = 1 << s
        out = [((a << s) + i, (b << s) + j) for a, b in self.cells for i in range(n) for j in range(n)]
        return GridSet(level, out, self.window)

    def with_cells(self, cells: Iterable) -> "GridSet":
        return GridSet(self.level, tuple(cells), self.window)

    def union(self, other: "GridSet") -> "GridSet":
        self._check_level(other)
        return self.with_cells(self.cellset | other.cellset)

    def intersection(self, other: "GridSet") -> "GridSet":
        self._check_level(other)
        return self.with_cells(self.cellset & other.cellset)

    def difference(self, other: "GridSet") -> "GridSet":
        self._check_level(other)
        return self.with_cells(self.cellset - other.cellset)

    def issubset(self, other: "GridSet") -> bool:
        self._check_level(other)
        return self.cellset <= other.cellset

    def _check_level(self, other: "GridSet"):
        if other.level != self.level:
            raise ValueError(f"level mismatch {self.level} vs {other.level}")

    def transform(self, z0, r0, window=None) -> "GridSet":
        """Image under ``z -> (z - z0) / r0``; ``z0`` must lie on the cell grid, ``r0`` dyadic.

        Without ``window`` the image of the current window is used, so no cell is lost.
        With ``window`` the image is clipped to it.
        """
        px, py, new_level = grid_translation(self.level, z0, r0)
        cells = [(a - px, b - py) for a, b in self.cells]
        w = transform_window(self.window, z0, r0)
        if window is None:
            return GridSet(new_level, cells, w)
        w = as_window(window)
        probe = GridSet(new_level, (), w)
        x0, y0, x1, y1 = probe._index_bounds()
        return GridSet(new_level, [c for c in cells if x0 <= c[0] <= x1 and y0 <= c[1] <= y1], w)

    def diameter_sq(self) -> Fraction:
        """Exact squared diameter of the union of closed cells."""
        if not self.cells:
            return Fraction(0)
        hull = _convex_hull_corners(self.cells)
        best = 0
        for i in range(len(hull)):
            ax, ay = hull[i]
            for j in range(i + 1, len(hull)):
                d = (ax - hull[j][0]) ** 2 + (ay - hull[j][1]) ** 2
                if d > best:
                    best = d
        return best * self.side**2

    # serialization

    def to_text(self) -> str:
        out = io.StringIO()
        write_gridset_text(self, out)
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "GridSet":
        return read_gridset_text(io.StringIO(text))

    def to_bytes(self) -> bytes:
        return gridset_to_bytes(self)

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridSet":
        return gridset_from_bytes(data)


def _convex_hull_corners(cells) -> list[tuple[int, int]]:
    pts = set()
    for a, b in cells:
        pts.update(((a, b), (a + 1, b), (a, b + 1), (a + 1, b + 1)))
    pts = sorted(pts)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def grid_translation(level: int, z0, r0) -> tuple[int, int, int]:
    """Integer shift and new level for ``z -> (z - z0)/r0`` acting on level-``level`` cells."""
    a = scale_level(r0)
    zx, zy = as_point(z0)
    h = level_scale(level)
    qx, qy = zx / h, zy / h
    if qx.denominator != 1 or qy.denominator != 1:
        raise ValueError(f"center {z0} is not on the level-{level} grid; cells would not map to cells")
    return int(qx), int(qy), level - a


def transform_window(w: Window, z0, r0) -> Window:
    zx, zy = as_point(z0)
    r0 = as_fraction(r0)
    return ((w[0] - zx) / r0, (w[1] - zy) / r0, (w[2] - zx) / r0, (w[3] - zy) / r0)


def cell_dist_sq(level: int, ix: int, iy: int, p: Point) -> Fraction:
    """Squared Euclidean distance from ``p`` to the closed cell."""
    h = level_scale(level)
    px, py = p
    x0, y0 = ix * h, iy * h
    gx = x0 - px if px < x0 else (px - x0 - h if px > x0 + h else 0)
    gy = y0 - py if py < y0 else (py - y0 - h if py > y0 + h else 0)
    return gx * gx + gy * gy


def covering_count(s: GridSet, r) -> int:
    """Number of dyadic ``r``-cells meeting the set."""
    j = scale_level(r)
    if j > s.level:
        raise ValueError(
            f"scale 2^-{j} is finer than the resolution 2^-{s.level}; the count would lose information"
        )
    return len(s.coarsen(j))


def _stencil(radius_in_cells: Fraction) -> list[tuple[int, int]]:
    # offsets whose closed-cell gap is strictly below the radius
    R2 = radius_in_cells * radius_in_cells
    reach = math.ceil(radius_in_cells) + 1
    out = []
    for dx in range(-reach, reach + 1):
        gx = max(abs(dx) - 1, 0)
        for dy in range(-reach, reach + 1):
            gy = max(abs(dy) - 1, 0)
            if gx * gx + gy * gy < R2:
                out.append((dx, dy))
    return out


def neighborhood(s: GridSet, radius) -> GridSet:
    """Cells at the same level whose distance to some cell of ``s`` is below ``radius``."""
    radius = as_fraction(radius)
    if radius < s.side:
        raise ValueError("neighborhood radius must be at least one cell side")
    if not s.cells:
        return s
    st = _stencil(radius / s.side)
    x0, y0, x1, y1 = s._index_bounds()
    out = set()
    for a, b in s.cells:
        for dx, dy in st:
            c = (a + dx, b + dy)
            if x0 <= c[0] <= x1 and y0 <= c[1] <= y1:
                out.add(c)
    return s.with_cells(out)


def ball_cells(center, radius, level: int, window=None) -> GridSet:
    """Level-``level`` cells meeting the open ball ``B(center, radius)``."""
    c = as_point(center)
    radius = as_fraction(radius)
    if radius <= 0:
        raise ValueError("radius must be positive")
    h = level_scale(level)
    r2 = radius * radius
    w = as_window(window)
    probe = GridSet(level, (), w)
    bx0, by0, bx1, by1 = probe._index_bounds()
    ix0 = max(_floor_div(c[0] - radius, h), bx0)
    ix1 = min(_floor_div(c[0] + radius, h), bx1)
    iy0 = max(_floor_div(c[1] - radius, h), by0)
    iy1 = min(_floor_div(c[1] + radius, h), by1)
    out = [
        (i, j)
        for i in range(ix0, ix1 + 1)
        for j in range(iy0, iy1 + 1)
        if cell_dist_sq(level, i, j, c) < r2
    ]
    return GridSet(level, out, w)


# --- serialization ---------------------------------------------------------


def _frac_str(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def write_gridset_text(s: GridSet, fh) -> None:
    fh.write(f"level {s.level}\n")
    fh.write("window " + " ".join(_frac_str(v) for v in s.window) + "\n")
    for a, b in s.cells:
        fh.write(f"{a} {b}\n")


def read_gridset_text(fh, *, stop_at_weights: bool = False) -> GridSet:
    level = None
    window = DEFAULT_WINDOW
    cells = []
    for lineno, raw in enumerate(fh, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "level":
            if level is not None:
                raise ValueError(f"line {lineno}: duplicate level header")
            level = int(parts[1])
        elif parts[0] == "window":
            if len(parts) != 5:
                raise ValueError(f"line {lineno}: window needs 4 values")
            window = as_window(parts[1:])
        elif level is None:
            raise ValueError(f"line {lineno}: missing 'level k' header")
        elif len(parts) == 2:
            cells.append((int(parts[0]), int(parts[1])))
        elif stop_at_weights and len(parts) == 4:
            break
        else:
            raise ValueError(f"line {lineno}: expected 'ix iy', got {line!r}")
    if level is None:
        raise ValueError("missing 'level k' header")
    return GridSet(level, cells, window)


_MAGIC = b"FLGS\x01"


def _pack_frac(x: Fraction) -> bytes:
    n, d = x.numerator, x.denominator
    nb = n.to_bytes((n.bit_length() + 8) // 8, "little", signed=True)
    db = d.to_bytes((d.bit_length() + 7) // 8 or 1, "little")
    return struct.pack("<HH", len(nb), len(db)) + nb + db


def _unpack_frac(buf: memoryview, pos: int) -> tuple[Fraction, int]:
    ln, ld = struct.unpack_from("<HH", buf, pos)
    pos += 4
    n = int.from_bytes(buf[pos : pos + ln], "little", signed=True)
    pos += ln
    d = int.from_bytes(buf[pos : pos + ld], "little")
    return Fraction(n, d), pos + ld


def gridset_to_bytes(s: GridSet) -> bytes:
    """Row-wise run-length encoding: for each occupied row, runs of consecutive ``ix``."""
    rows: dict[int, list[int]] = {}
    for a, b in s.cells:
        rows.setdefault(b, []).append(a)
    out = bytearray(_MAGIC)
    out += struct.pack("<q", s.level)
    for v in s.window:
        out += _pack_frac(v)
    out += struct.pack("<Q", len(rows))
    for iy in sorted(rows):
        xs = sorted(rows[iy])
        runs = []
        start = prev = xs[0]
        for x in xs[1:]:
            if x != prev + 1:
                runs.append((start, prev - start + 1))
                start = x
            prev = x
        runs.append((start, prev - start + 1))
        out += struct.pack("<qQ", iy, len(runs))
        for st, ln in runs:
            out += struct.pack("<qQ", st, ln)
    return bytes(out)


def gridset_from_bytes(data: bytes) -> GridSet:
    if not data.startswith(_MAGIC):
        raise ValueError("not a binary grid-set stream")
    buf = memoryview(data)
    pos = len(_MAGIC)
    (level,) = struct.unpack_from("<q", buf, pos)
    pos += 8
    w = []
    for _ in range(4):
        v, pos = _unpack_frac(buf, pos)
        w.append(v)
    (nrows,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    cells = []
    for _ in range(nrows):
        iy, nruns = struct.unpack_from("<qQ", buf, pos)
        pos += 16
        for _ in range(nruns):
            st, ln = struct.unpack_from("<qQ", buf, pos)
            pos += 16
            cells.extend((st + t, iy) for t in range(ln))
    if pos != len(data):
        raise ValueError("trailing bytes in binary grid-set stream")
    return GridSet(level, cells, tuple(w))
