"""Projections of grid sets, tube decompositions and the greedy minimal cover."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from fraclab.dyadic import GridSet, as_fraction, as_point, level_scale, scale_level
from fraclab.measure import GridMeasure


@dataclass(frozen=True)
class Direction:
    """Projection ``z -> a*x + b*y`` with exact rational coefficients.

    ``kind`` says which description is authoritative: ``"slope"`` means
    ``(a, b) = (1, theta)``; ``"unit"`` means ``(a, b)`` is an exact rational point
    on the unit circle close to the angle ``2*pi*turn``; ``"vector"`` is any
    nonzero pair.  Fibres only depend on the line spanned by ``(a, b)``.
    """

    a: Fraction
    b: Fraction
    kind: str = "vector"
    turn: Fraction | None = None

    def __post_init__(self):
        object.__setattr__(self, "a", as_fraction(self.a))
        object.__setattr__(self, "b", as_fraction(self.b))
        if self.a == 0 and self.b == 0:
            raise ValueError("zero projection vector")

    @classmethod
    def from_slope(cls, theta) -> "Direction":
        return cls(Fraction(1), as_fraction(theta), "slope")

    @classmethod
    def from_vector(cls, a, b) -> "Direction":
        return cls(as_fraction(a), as_fraction(b), "vector")

    @classmethod
    def from_turn(cls, turn, max_den: int = 256) -> "Direction":
        """Rational unit vector near angle ``2*pi*turn`` (half-angle tangent parametrisation)."""
        turn = as_fraction(turn) % 1
        phi = 2 * math.pi * float(turn)
        if phi > math.pi:
            phi -= 2 * math.pi
        flip = abs(phi) > math.pi / 2
        if flip:
            phi = phi - math.copysign(math.pi, phi)
        u = Fraction(math.tan(phi / 2)).limit_denominator(max_den)
        den = 1 + u * u
        c, s = (1 - u * u) / den, 2 * u / den
        if flip:
            c, s = -c, -s
        return cls(c, s, "unit", turn)

    @property
    def slope(self) -> Fraction:
        if self.a == 0:
            raise ValueError("vertical fibres have no slope parametrisation")
        return self.b / self.a

    @property
    def unit(self) -> tuple[float, float]:
        n = math.hypot(float(self.a), float(self.b))
        return (float(self.a) / n, float(self.b) / n)

    def project(self, p) -> Fraction:
        x, y = as_point(p)
        return self.a * x + self.b * y

    def integer_vector(self) -> tuple[int, int]:
        """Integer multiple of ``(a, b)``; same fibres, exact integer arithmetic."""
        d = math.lcm(self.a.denominator, self.b.denominator)
        a, b = int(self.a * d), int(self.b * d)
        g = math.gcd(a, b)
        return a // g, b // g

    def label(self) -> str:
        if self.kind == "slope":
            return f"slope={self.slope}"
        if self.kind == "unit" and self.turn is not None:
            return f"turn={self.turn}"
        return f"vec=({self.a},{self.b})"


def slope_unit_lipschitz(theta) -> float:
    """Bi-Lipschitz factor between slope and unit projections: ``sqrt(1 + theta^2)``."""
    return math.sqrt(1 + float(as_fraction(theta)) ** 2)


# --- projected intervals ----------------------------------------------------


def cell_image(direction: Direction, level: int, cell) -> tuple[Fraction, bool, Fraction, bool]:
    """Exact image of a half-open cell: ``(lo, lo_closed, hi, hi_closed)``."""
    h = level_scale(level)
    a, b = direction.a, direction.b
    x0, y0 = cell[0] * h, cell[1] * h
    lo = hi = a * x0 + b * y0
    lo_closed = hi_closed = True
    for coef in (a, b):
        if coef > 0:
            hi += coef * h
            hi_closed = False
        elif coef < 0:
            lo += coef * h
            lo_closed = False
    return lo, lo_closed, hi, hi_closed


def _interval_indices(lo, lo_closed, hi, hi_closed, w: Fraction) -> range:
    # dyadic w-intervals [k w, (k+1) w) meeting the interval
    k0 = math.floor(lo / w)
    if lo == hi:
        return range(k0, k0 + 1) if lo_closed and hi_closed else range(0)
    q = hi / w
    k1 = math.floor(q)
    if q == k1:
        k1 -= 1
    return range(k0, k1 + 1)


def project_cover(F: GridSet, theta: Direction, r, convention: str = "image") -> int:
    """Number of dyadic ``r``-intervals meeting the projection of ``F``.

    ``convention="image"`` uses the exact image of each half-open cell;
    ``convention="corner"`` projects only each cell's lower-left corner, which is
    the rule used by :func:`tube_decompose`.
    """
    r = as_fraction(r)
    scale_level(r)
    if r < F.side:
        raise ValueError("projection scale finer than the set's resolution")
    hit: set[int] = set()
    if convention == "image":
        for c in F.cells:
            hit.update(_interval_indices(*cell_image(theta, F.level, c), r))
    elif convention == "corner":
        h = F.side
        for c in F.cells:
            hit.add(math.floor(theta.project((c[0] * h, c[1] * h)) / r))
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return len(hit)


@dataclass(frozen=True)
class Tube:
    index: int
    cells: tuple[tuple[int, int], ...]
    mass: Fraction


@dataclass(frozen=True)
class TubeDecomposition:
    direction: Direction
    width: Fraction
    tubes: tuple[Tube, ...]

    @property
    def total_mass(self) -> Fraction:
        return sum((t.mass for t in self.tubes), Fraction(0))


def tube_decompose(mu: GridMeasure, theta: Direction, w) -> TubeDecomposition:
    """Partition support cells by the ``w``-interval containing their lower-left corner's projection."""
    w = as_fraction(w)
    scale_level(w)
    if w < mu.side:
        raise ValueError("tube width finer than the measure's resolution")
    h = mu.side
    groups: dict[int, list] = {}
    for c in mu.support.cells:
        k = math.floor(theta.project((c[0] * h, c[1] * h)) / w)
        groups.setdefault(k, []).append(c)
    tubes = tuple(
        Tube(k, tuple(cs), mu.mantissa_mass(cs)) for k, cs in sorted(groups.items())
    )
    return TubeDecomposition(theta, w, tubes)


def greedy_min_cover(mu: GridMeasure, theta: Direction, w, m) -> tuple[int, list[Tube]]:
    """Fewest tubes whose union carries rational mass ``>= m``; heaviest first, ties to lowest index."""
    m = as_fraction(m)
    total = mu.mantissa_mass()
    if m < 0:
        raise ValueError("mass threshold must be non-negative")
    if m > total:
        raise ValueError(f"threshold {m} exceeds total mass {total}")
    dec = tube_decompose(mu, theta, w)
    order = sorted(dec.tubes, key=lambda t: (-t.mass, t.index))
    acc = Fraction(0)
    chosen: list[Tube] = []
    for t in order:
        if acc >= m:
            break
        chosen.append(t)
        acc += t.mass
    return len(chosen), chosen
