"""Discrete measures on grid sets.

Weights are exact rationals.  Renormalisation multiplies every weight by
``r^-s`` which is irrational in general, so a measure carries a common factor
``2**log2_scale`` (rational exponent) on top of its rational weights.  Two
renormalisations compose by adding exponents, which keeps the chain rule exact.

Ball masses use the convention that a cell counts as soon as it meets the open
ball.  This over-counts the continuum mass by at most the cells straddling the
sphere, a bounded factor recorded with each report.
"""

from __future__ import annotations

import bisect
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping

from fraclab.dyadic import (
    GridSet,
    Point,
    as_fraction,
    as_point,
    as_window,
    grid_translation,
    level_scale,
    read_gridset_text,
    scale_level,
    transform_window,
    write_gridset_text,
)

LOG_TOL = 1e-12


def log2_fraction(x: Fraction) -> float:
    x = as_fraction(x)
    if x <= 0:
        raise ValueError("log of non-positive value")
    return math.log2(x.numerator) - math.log2(x.denominator)


@dataclass(frozen=True)
class Ball:
    center: Point
    radius: Fraction

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        object.__setattr__(self, "radius", as_fraction(self.radius))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")


class GridMeasure:
    """Positive rational weights on the cells of a :class:`GridSet`."""

    def __init__(self, level: int, weights: Mapping, window=None, log2_scale=0):
        w = {}
        for c, v in weights.items():
            v = as_fraction(v)
            if v < 0:
                raise ValueError(f"negative weight at {c}")
            if v:
                w[(int(c[0]), int(c[1]))] = v
        self.support = GridSet(level, tuple(w), as_window(window))
        self.weights = {c: w[c] for c in self.support.cells}
        self.log2_scale = as_fraction(log2_scale)

    @classmethod
    def uniform(cls, support: GridSet) -> "GridMeasure":
        if not support.cells:
            raise ValueError("uniform measure on an empty set")
        p = Fraction(1, len(support))
        return cls(support.level, {c: p for c in support.cells}, support.window)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridMeasure):
            return NotImplemented
        return (
            self.support == other.support
            and self.weights == other.weights
            and self.log2_scale == other.log2_scale
        )

    def __repr__(self) -> str:
        return (
            f"GridMeasure(level={self.level}, cells={len(self.weights)}, "
            f"mass={self.mantissa_mass()}, log2_scale={self.log2_scale})"
        )

    @property
    def level(self) -> int:
        return self.support.level

    @property
    def side(self) -> Fraction:
        return self.support.side

    def mantissa_mass(self, cells: Iterable | None = None) -> Fraction:
        if cells is None:
            return sum(self.weights.values(), Fraction(0))
        return sum((self.weights.get(tuple(c), Fraction(0)) for c in cells), Fraction(0))

    def mass(self, cells: Iterable | None = None):
        """Mass of the given cells; exact when the scale exponent is an integer."""
        m = self.mantissa_mass(cells)
        e = self.log2_scale
        if e.denominator == 1:
            return m * Fraction(2) ** int(e)
        return float(m) * 2.0 ** float(e)

    @property
    def total_mass(self):
        return self.mass()

    def is_probability(self) -> bool:
        return self.log2_scale == 0 and self.mantissa_mass() == 1

    def normalized(self) -> "GridMeasure":
        tot = self.mantissa_mass()
        if tot == 0:
            raise ValueError("cannot normalise the zero measure")
        return GridMeasure(self.level, {c: v / tot for c, v in self.weights.items()}, self.support.window)

    def restrict(self, cells: Iterable) -> "GridMeasure":
        keep = {tuple(c) for c in cells}
        return GridMeasure(
            self.level,
            {c: v for c, v in self.weights.items() if c in keep},
            self.support.window,
            self.log2_scale,
        )

    def conditional(self, cells: Iterable) -> "GridMeasure":
        """Normalised restriction; has mass exactly one."""
        return self.restrict(cells).normalized()

    def coarse_weights(self, level: int) -> dict[tuple[int, int], Fraction]:
        s = self.level - level
        if s < 0:
            raise ValueError("partition level finer than the measure's resolution")
        out: dict[tuple[int, int], Fraction] = {}
        for (a, b), v in self.weights.items():
            k = (a >> s, b >> s)
            out[k] = out.get(k, Fraction(0)) + v
        return out

    # ball queries

    @cached_property
    def _rows(self):
        rows: dict[int, list[tuple[int, Fraction]]] = {}
        for (a, b), v in self.weights.items():
            rows.setdefault(b, []).append((a, v))
        index = {}
        for b, items in rows.items():
            items.sort()
            xs = [a for a, _ in items]
            pref = [Fraction(0)]
            for _, v in items:
                pref.append(pref[-1] + v)
            index[b] = (xs, pref)
        return sorted(index), index

    def _row_ranges(self, center: Point, radius: Fraction):
        # yields (row, lo_pos, hi_pos) covering support cells that meet the open ball
        keys, index = self._rows
        h = self.side
        px, py = center
        r2 = radius * radius
        j0 = bisect.bisect_left(keys, math.floor((py - radius) / h))
        j1 = bisect.bisect_right(keys, math.floor((py + radius) / h))
        for b in keys[j0:j1]:
            y0 = b * h
            gy = y0 - py if py < y0 else (py - y0 - h if py > y0 + h else 0)
            rem = r2 - gy * gy
            if rem <= 0:
                continue
            xs, _ = index[b]
            rho = math.sqrt(rem.numerator / rem.denominator)
            lo = math.floor((float(px) - rho) / float(h)) - 1
            hi = math.floor((float(px) + rho) / float(h)) + 1
            while not _gap_lt(lo, h, px, rem):
                lo += 1
                if lo > hi:
                    break
            while hi >= lo and not _gap_lt(hi, h, px, rem):
                hi -= 1
            if lo > hi:
                continue
            yield b, bisect.bisect_left(xs, lo), bisect.bisect_right(xs, hi)

    def ball_mantissa(self, center, radius) -> Fraction:
        """Rational weight sum of support cells meeting the open ball (scale factor excluded)."""
        center = as_point(center)
        radius = as_fraction(radius)
        _, index = self._rows
        tot = Fraction(0)
        for b, i, j in self._row_ranges(center, radius):
            pref = index[b][1]
            tot += pref[j] - pref[i]
        return tot

    def ball_support_cells(self, center, radius) -> list[tuple[int, int]]:
        center = as_point(center)
        radius = as_fraction(radius)
        _, index = self._rows
        out = []
        for b, i, j in self._row_ranges(center, radius):
            out.extend((a, b) for a in index[b][0][i:j])
        return out

    def ball_mass(self, center, radius):
        m = self.ball_mantissa(center, radius)
        e = self.log2_scale
        if e.denominator == 1:
            return m * Fraction(2) ** int(e)
        return float(m) * 2.0 ** float(e)


def _gap_lt(ix: int, h: Fraction, px: Fraction, rem: Fraction) -> bool:
    x0 = ix * h
    gx = x0 - px if px < x0 else (px - x0 - h if px > x0 + h else 0)
    return gx * gx < rem


# --- regularity -------------------------------------------------------------


@dataclass(frozen=True)
class RegularityReport:
    kind: str
    s: Fraction
    C_best: float
    witness: dict
    verdict: bool | None
    C: float | None = None
    checked: int = 0
    slack_note: str = "dyadic centers and radii only; cells meeting the open ball are counted"
    details: dict = field(default_factory=dict)


def _verdict(log2_best: float, C) -> bool | None:
    if C is None:
        return None
    C = float(C)
    if C <= 0:
        return False
    return log2_best <= math.log2(C) + LOG_TOL


def _dyadic_radius_levels(h_level: int, max_sq: Fraction) -> list[int]:
    # levels j with side <= 2^-j and 4^-j <= max_sq, coarse first
    out = []
    j = h_level
    while level_scale(j) ** 2 <= max_sq:
        out.append(j)
        j -= 1
    return out[::-1]


def _window_diam_sq(w) -> Fraction:
    return (w[2] - w[0]) ** 2 + (w[3] - w[1]) ** 2


def check_frostman(mu: GridMeasure, s, C=None) -> RegularityReport:
    """Scan ``mu(B(x, r)) / r^s`` over support cell centers and dyadic radii."""
    if not mu.weights:
        raise ValueError("Frostman check needs a nonempty measure")
    s = as_fraction(s)
    radii = _dyadic_radius_levels(mu.level, _window_diam_sq(mu.support.window))
    best, wit, n = -math.inf, {}, 0
    scale = float(mu.log2_scale)
    for cell in mu.support.cells:
        x = mu.support.center(cell)
        for j in radii:
            m = mu.ball_mantissa(x, level_scale(j))
            n += 1
            v = log2_fraction(m) + scale + float(j * s)
            if v > best:
                best, wit = v, {"x": x, "r": level_scale(j), "ratio": 2.0**v}
    return RegularityReport("frostman", s, 2.0**best, wit, _verdict(best, C), C, n)


def check_upper_regular(K: GridSet, s, C=None) -> RegularityReport:
    """Scan ``|K cap B(x,R)|_r / (R/r)^s`` over dyadic ``r <= R``."""
    s = as_fraction(s)
    if not K.cells:
        return RegularityReport("upper_regular", s, 0.0, {}, True if C is not None else None, C, 0)
    mu = GridMeasure.uniform(K)
    Rlevels = _dyadic_radius_levels(K.level, _window_diam_sq(K.window))
    best, wit, n = -math.inf, {}, 0
    for cell in K.cells:
        x = K.center(cell)
        for jR in Rlevels:
            inside = mu.ball_support_cells(x, level_scale(jR))
            cur = set(inside)
            counts = {K.level: len(cur)}
            for jr in range(K.level - 1, jR - 1, -1):
                cur = {(a >> 1, b >> 1) for a, b in cur}
                counts[jr] = len(cur)
            for jr in range(jR, K.level + 1):
                n += 1
                v = math.log2(counts[jr]) - float((jr - jR) * s)
                if v > best:
                    best = v
                    wit = {"x": x, "R": level_scale(jR), "r": level_scale(jr), "count": counts[jr]}
    return RegularityReport("upper_regular", s, 2.0**best, wit, _verdict(best, C), C, n)


def check_ahlfors(mu: GridMeasure, s, C=None) -> RegularityReport:
    """Two-sided scan at support centers for dyadic ``r`` between one side and the diameter."""
    if not mu.weights:
        raise ValueError("Ahlfors check needs a nonempty measure")
    s = as_fraction(s)
    radii = _dyadic_radius_levels(mu.level, mu.support.diameter_sq())
    scale = float(mu.log2_scale)
    up, low = -math.inf, -math.inf
    wup, wlow, n = {}, {}, 0
    for cell in mu.support.cells:
        x = mu.support.center(cell)
        for j in radii:
            m = mu.ball_mantissa(x, level_scale(j))
            n += 1
            v = log2_fraction(m) + scale + float(j * s)
            if v > up:
                up, wup = v, {"x": x, "r": level_scale(j), "ratio": 2.0**v}
            if -v > low:
                low, wlow = -v, {"x": x, "r": level_scale(j), "ratio": 2.0**v}
    best = max(up, low)
    wit = {"side": "upper" if up >= low else "lower", **(wup if up >= low else wlow)}
    return RegularityReport(
        "ahlfors", s, 2.0**best, wit, _verdict(best, C), C, n,
        details={"upper_C": 2.0**up, "lower_C": 2.0**low, "upper_witness": wup, "lower_witness": wlow},
    )


# --- renormalisation --------------------------------------------------------


def renormalize(mu: GridMeasure, B: Ball, s, window=None) -> GridMeasure:
    """Push ``mu`` forward under ``z -> (z - x0)/r0`` and multiply by ``r0^-s``.

    With ``window=None`` the whole image is kept; otherwise cells outside the
    target window are dropped (only the mass inside the preimage survives).
    """
    s = as_fraction(s)
    try:
        a = scale_level(B.radius)
    except ValueError:
        raise ValueError(f"renormalisation radius {B.radius} is not a dyadic power") from None
    px, py, new_level = grid_translation(mu.level, B.center, B.radius)
    if new_level < 0:
        raise ValueError(
            f"resolution underflow: level {mu.level} rescaled by 2^{a} falls below level 0"
        )
    w = transform_window(mu.support.window, B.center, B.radius)
    weights = {(c[0] - px, c[1] - py): v for c, v in mu.weights.items()}
    if window is not None:
        w = as_window(window)
        probe = GridSet(new_level, (), w)
        x0, y0, x1, y1 = probe._index_bounds()
        weights = {c: v for c, v in weights.items() if x0 <= c[0] <= x1 and y0 <= c[1] <= y1}
    return GridMeasure(new_level, weights, w, mu.log2_scale + a * s)


def compose_balls(B: Ball, Bp: Ball) -> Ball:
    """The ball ``B''`` with ``T_{B''} = T_{B'} o T_B``."""
    return Ball(
        (B.center[0] + B.radius * Bp.center[0], B.center[1] + B.radius * Bp.center[1]),
        B.radius * Bp.radius,
    )


# --- David cubes ------------------------------------------------------------


class PartitionError(ValueError):
    def __init__(self, msg, pair=None):
        super().__init__(msg)
        self.pair = pair


@dataclass(frozen=True)
class DavidCubeReport:
    q1: bool
    q2: bool
    q3: bool
    witnesses: dict

    @property
    def ok(self) -> bool:
        return self.q1 and self.q2 and self.q3


def dyadic_cube_family(mu: GridMeasure, levels: Iterable[int] | None = None) -> dict[int, list[frozenset]]:
    """Standard dyadic cells, as sets of support cells, for each requested level."""
    levels = range(0, mu.level + 1) if levels is None else levels
    fam = {}
    for j in levels:
        s = mu.level - j
        groups: dict[tuple[int, int], set] = {}
        for a, b in mu.support.cells:
            groups.setdefault((a >> s, b >> s), set()).add((a, b))
        fam[j] = [frozenset(g) for _, g in sorted(groups.items())]
    return fam


def verify_david_cubes(mu: GridMeasure, cubes: Mapping[int, list], A, s) -> DavidCubeReport:
    """Check nesting, diameter and mass bounds of a per-level family of support-cell sets."""
    A = as_fraction(A)
    s = as_fraction(s)
    support = set(mu.support.cells)
    levels = sorted(cubes)
    fam = {j: [frozenset(map(tuple, Q)) for Q in cubes[j]] for j in levels}
    for j in levels:
        seen: dict = {}
        for qi, Q in enumerate(fam[j]):
            for c in Q:
                if c not in support:
                    raise PartitionError(f"level {j}: cube {qi} contains non-support cell {c}", (j, qi))
                if c in seen:
                    raise PartitionError(
                        f"level {j}: cubes {seen[c]} and {qi} overlap at {c}", ((j, seen[c]), (j, qi))
                    )
                seen[c] = qi
        if len(seen) != len(support):
            missing = sorted(support - set(seen))[0]
            raise PartitionError(f"level {j}: support cell {missing} not covered", (j, None))
    wit: dict = {}
    q1 = True
    for a_i, i in enumerate(levels):
        owner = {}
        for qi, Q in enumerate(fam[i]):
            for c in Q:
                owner[c] = qi
        for j in levels[a_i + 1 :]:
            for qj, Q in enumerate(fam[j]):
                parents = {owner[c] for c in Q}
                if len(parents) > 1 and q1:
                    q1 = False
                    wit["q1"] = {"coarse_level": i, "fine_level": j, "cube": qj, "meets": sorted(parents)}
    q2 = True
    A2 = A * A
    for j in levels:
        t2 = level_scale(j) ** 2
        for qi, Q in enumerate(fam[j]):
            d2 = GridSet(mu.level, Q, mu.support.window).diameter_sq()
            if not (t2 / A2 <= d2 <= A2 * t2):
                if q2:
                    wit["q2"] = {"level": j, "cube": qi, "diam_sq": d2}
                q2 = False
    q3 = True
    diam2 = mu.support.diameter_sq()
    logA = log2_fraction(A)
    scale = float(mu.log2_scale)
    for j in levels:
        if level_scale(j) ** 2 > diam2:
            continue
        target = -float(j * s)
        for qi, Q in enumerate(fam[j]):
            v = log2_fraction(mu.mantissa_mass(Q)) + scale - target
            if v > logA + LOG_TOL or v < -logA - LOG_TOL:
                if q3:
                    wit["q3"] = {"level": j, "cube": qi, "ratio": 2.0**v}
                q3 = False
    return DavidCubeReport(q1, q2, q3, wit)


# --- measure files ----------------------------------------------------------


def write_measure_text(mu: GridMeasure, fh) -> None:
    write_gridset_text(mu.support, fh)
    if mu.log2_scale:
        e = mu.log2_scale
        fh.write(f"scale {e.numerator}/{e.denominator}\n")
    for c in mu.support.cells:
        v = mu.weights[c]
        fh.write(f"{c[0]} {c[1]} {v.numerator} {v.denominator}\n")


def measure_to_text(mu: GridMeasure) -> str:
    out = io.StringIO()
    write_measure_text(mu, out)
    return out.getvalue()


def read_measure_text(text: str) -> GridMeasure:
    lines = text.splitlines()
    head, body, scale = [], {}, Fraction(0)
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "scale":
            scale = Fraction(parts[1])
        elif len(parts) == 4:
            try:
                a, b, p, q = (int(t) for t in parts)
            except ValueError:
                raise ValueError(f"line {lineno}: malformed weight line {line!r}") from None
            if q <= 0 or p <= 0:
                raise ValueError(f"line {lineno}: weight must be a positive fraction")
            body[(a, b)] = Fraction(p, q)
        else:
            head.append(line)
    support = read_gridset_text(io.StringIO("\n".join(head)))
    if set(body) != set(support.cells):
        extra = sorted(set(body) ^ set(support.cells))[:3]
        raise ValueError(f"weights and support disagree at {extra}")
    return GridMeasure(support.level, body, support.window, scale)
