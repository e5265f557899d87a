"""Digit-system fractals in the plane and direction measures on the circle."""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from fractions import Fraction

from fraclab.dyadic import DyadicInterval, GridSet, as_fraction, scale_level
from fraclab.measure import GridMeasure
from fraclab.projection import Direction

MAX_LEVEL = 24


@dataclass(frozen=True)
class DigitSystem:
    base: int
    digits: tuple
    depth: int
    planar: bool = True

    def __post_init__(self):
        if self.base < 2 or self.base & (self.base - 1):
            raise ValueError("base must be a power of two")
        ds = tuple(sorted(set(tuple(d) if self.planar else int(d) for d in self.digits)))
        if not ds:
            raise ValueError("empty digit set")
        for d in ds:
            coords = d if self.planar else (d,)
            if any(not 0 <= c < self.base for c in coords):
                raise ValueError(f"digit {d} outside 0..{self.base - 1}")
        object.__setattr__(self, "digits", ds)
        if self.depth < 0:
            raise ValueError("negative depth")

    @property
    def bits(self) -> int:
        return self.base.bit_length() - 1

    @property
    def level(self) -> int:
        return self.depth * self.bits

    @property
    def dimension(self) -> Fraction:
        """``log|D| / log b``; exact when ``|D|`` is a power of two, else the nearest rational with denominator <= 1024."""
        n = len(self.digits)
        if n & (n - 1) == 0:
            return Fraction(n.bit_length() - 1, self.bits)
        return Fraction(math.log(n) / math.log(self.base)).limit_denominator(1 << 10)

    def with_depth(self, depth: int) -> "DigitSystem":
        return DigitSystem(self.base, self.digits, depth, self.planar)

    def spec(self) -> str:
        if self.planar:
            ds = ",".join(f"({a},{b})" for a, b in self.digits)
        else:
            ds = ",".join(str(d) for d in self.digits)
        return f"b={self.base};D={ds};n={self.depth}"

    @classmethod
    def parse(cls, text: str) -> "DigitSystem":
        """Parse ``b=4;D=(0,0),(3,3);n=3`` (planar) or ``b=4;D=0,3;n=3`` (linear)."""
        fields = {}
        for part in text.split(";"):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise ValueError(f"bad digit-system field {part!r}")
            k, v = part.split("=", 1)
            fields[k.strip()] = v.strip()
        missing = {"b", "D"} - set(fields)
        if missing:
            raise ValueError(f"digit system missing {sorted(missing)}")
        base = int(fields["b"])
        depth = int(fields.get("n", 1))
        pairs = re.findall(r"\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)", fields["D"])
        if pairs:
            return cls(base, tuple((int(a), int(b)) for a, b in pairs), depth, True)
        return cls(base, tuple(int(t) for t in fields["D"].split(",")), depth, False)


def _digit_cells(sys: DigitSystem) -> list:
    b = sys.base
    out = []
    for word in itertools.product(sys.digits, repeat=sys.depth):
        if sys.planar:
            x = y = 0
            for dx, dy in word:
                x, y = x * b + dx, y * b + dy
            out.append((x, y))
        else:
            x = 0
            for d in word:
                x = x * b + d
            out.append(x)
    return out


def generate_planar(sys: DigitSystem, window=None) -> tuple[GridSet, GridMeasure]:
    """All depth-``n`` digit cells, with the uniform (natural) measure."""
    if not sys.planar:
        raise ValueError("generate_planar needs a planar digit system")
    if sys.level > MAX_LEVEL:
        raise ValueError(f"resolution overflow: level {sys.level} exceeds cap {MAX_LEVEL}")
    K = GridSet(sys.level, _digit_cells(sys), window)
    return K, GridMeasure.uniform(K)


def product_system(first: DigitSystem, second: DigitSystem) -> DigitSystem:
    """Planar system for ``A x B`` from two linear systems with the same base and depth."""
    if first.planar or second.planar or first.base != second.base or first.depth != second.depth:
        raise ValueError("need two linear systems with equal base and depth")
    ds = tuple((a, b) for a in first.digits for b in second.digits)
    return DigitSystem(first.base, ds, first.depth, True)


FOUR_CORNER = ((0, 0), (0, 3), (3, 0), (3, 3))
CORPUS_NAMES = ("four_corner", "cantor_line", "segment", "diagonal")


def corpus_system(name: str, level: int) -> DigitSystem:
    """Named corpus instance at an even resolution level."""
    if name in ("four_corner", "cantor_x_cantor"):
        return DigitSystem(4, FOUR_CORNER, level // 2)
    if name == "cantor_line":
        return DigitSystem(4, ((0, 0), (3, 0)), level // 2)
    if name == "segment":
        return DigitSystem(2, ((0, 0), (1, 0)), level)
    if name == "diagonal":
        return DigitSystem(4, ((0, 0), (1, 1), (2, 2), (3, 3)), level // 2)
    if name == "square":
        return DigitSystem(2, ((0, 0), (0, 1), (1, 0), (1, 1)), level)
    raise KeyError(f"unknown corpus instance {name!r}")


def default_corpus(level: int) -> list[tuple[str, DigitSystem]]:
    if level % 2:
        raise ValueError("corpus level must be even (base-4 systems)")
    return [(n, corpus_system(n, level)) for n in CORPUS_NAMES]


# --- circle measures --------------------------------------------------------


class ArcMeasure:
    """Rational weights on level-``k`` dyadic intervals of ``[0,1)``, read as the circle."""

    def __init__(self, level: int, weights: dict):
        if level < 0:
            raise ValueError("negative level")
        w = {}
        for i, v in weights.items():
            i = int(i.index if isinstance(i, DyadicInterval) else i)
            v = as_fraction(v)
            if v < 0:
                raise ValueError("negative weight")
            if not 0 <= i < 2**level:
                raise ValueError(f"interval index {i} outside level {level}")
            if v:
                w[i] = v
        self.level = level
        self.weights = dict(sorted(w.items()))

    def __eq__(self, other):
        if not isinstance(other, ArcMeasure):
            return NotImplemented
        return self.level == other.level and self.weights == other.weights

    def __repr__(self):
        return f"ArcMeasure(level={self.level}, intervals={len(self.weights)}, mass={self.mass})"

    @property
    def mass(self) -> Fraction:
        return sum(self.weights.values(), Fraction(0))

    def intervals(self) -> list[DyadicInterval]:
        return [DyadicInterval(self.level, i) for i in self.weights]

    def coarse_weights(self, level: int) -> dict[int, Fraction]:
        if level > self.level:
            return self.refine(level).weights
        s = self.level - level
        out: dict[int, Fraction] = {}
        for i, v in self.weights.items():
            out[i >> s] = out.get(i >> s, Fraction(0)) + v
        return out

    def refine(self, level: int) -> "ArcMeasure":
        """Split each interval's mass uniformly among its descendants."""
        if level <= self.level:
            return ArcMeasure(level, self.coarse_weights(level))
        s = level - self.level
        n = 2**s
        return ArcMeasure(level, {(i << s) + t: v / n for i, v in self.weights.items() for t in range(n)})

    def arc_mass(self, x, r) -> Fraction:
        """Mass of intervals meeting the open arc ``(x - r, x + r)`` on the circle."""
        x, r = as_fraction(x), as_fraction(r)
        if r >= Fraction(1, 2):
            return self.mass
        n = 2**self.level
        lo, hi = (x - r) * n, (x + r) * n
        k0 = math.floor(lo)
        k1 = math.ceil(hi) - 1
        hit = {k % n for k in range(k0, k1 + 1)}
        return sum((self.weights.get(k, Fraction(0)) for k in hit), Fraction(0))


def arc_measure_to_text(nu: ArcMeasure) -> str:
    """``arc <level>`` header then one ``index p/q`` line per interval."""
    lines = [f"arc {nu.level}"]
    lines += [f"{i} {v.numerator}/{v.denominator}" for i, v in sorted(nu.weights.items())]
    return "\n".join(lines) + "\n"


def arc_measure_from_text(text: str) -> ArcMeasure:
    level, weights = None, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "arc":
            if level is not None or len(parts) != 2:
                raise ValueError(f"line {lineno}: bad arc header {line!r}")
            level = int(parts[1])
            continue
        if level is None or len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'index p/q' after an 'arc <level>' header")
        try:
            i, v = int(parts[0]), Fraction(parts[1])
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"line {lineno}: malformed weight line {line!r}") from None
        if i in weights:
            raise ValueError(f"line {lineno}: duplicate interval {i}")
        weights[i] = v
    if level is None:
        raise ValueError("missing 'arc <level>' header")
    return ArcMeasure(level, weights)


def generate_arc_measure(kind: str, level: int, digits=(0, 3), base: int = 4, index: int = 0) -> ArcMeasure:
    if level < 1:
        raise ValueError("arc measure level must be >= 1")
    if kind == "uniform":
        p = Fraction(1, 2**level)
        return ArcMeasure(level, {i: p for i in range(2**level)})
    if kind == "cantor":
        sys = DigitSystem(base, tuple(digits), 0, planar=False)
        if level % sys.bits:
            raise ValueError(f"level {level} is not a multiple of log2(base)={sys.bits}")
        sys = sys.with_depth(level // sys.bits)
        idx = _digit_cells(sys)
        p = Fraction(1, len(idx))
        return ArcMeasure(level, {i: p for i in idx})
    if kind == "single-arc":
        return ArcMeasure(level, {index: Fraction(1)})
    raise ValueError(f"unknown arc measure kind {kind!r}")


def arc_frostman_constant(nu: ArcMeasure, tau, finest_level: int | None = None) -> tuple[float, dict]:
    """Largest ``nu(B(x,r)) / r^tau`` over interval midpoints and dyadic ``r`` down to the finest level."""
    tau = as_fraction(tau)
    k = nu.level if finest_level is None else max(finest_level, nu.level)
    fine = nu.refine(k)
    n = 2**k
    total = fine.mass
    # cyclic prefix sums: the open arc of radius 2^-j around the midpoint of
    # interval i meets exactly the intervals i-R .. i+R with R = 2^(k-j)
    prefix = [Fraction(0)]
    for t in range(2 * n):
        prefix.append(prefix[-1] + fine.weights.get(t % n, Fraction(0)))
    best, wit = 0.0, {}
    for i in fine.weights:
        x = Fraction(2 * i + 1, 2 ** (k + 1))
        for j in range(1, k + 1):
            R = 2 ** (k - j)
            if j == 1 or 2 * R + 1 >= n:
                m = total
            else:
                a = (i - R) % n
                m = prefix[a + 2 * R + 1] - prefix[a]
            v = float(m) * 2.0 ** float(j * tau)
            if v > best:
                best, wit = v, {"x": x, "r": Fraction(1, 2**j), "mass": m}
    return best, wit


def directions_from(nu: ArcMeasure, spacing) -> list[tuple[Direction, Fraction]]:
    """One unit direction per ``spacing``-interval carrying mass, with that interval's mass."""
    j = scale_level(spacing)
    if j > nu.level:
        raise ValueError("spacing finer than the arc measure's intervals")
    out = []
    for i, m in sorted(nu.coarse_weights(j).items()):
        mid = Fraction(2 * i + 1, 2 ** (j + 1))
        out.append((Direction.from_turn(mid), m))
    return out
