"""Multiplicity of fibres through grid sets and the lemmas built on it.

For a set ``K``, a direction and scales ``lo <= hi`` the multiplicity at ``x`` is
the number of ``lo``-cells of ``K`` that meet both the open ball ``B(x, hi)`` and
the fibre line through ``x``.  Two independent evaluators are provided:

* ``"direct"``: cells are indexed by their projected interval; each candidate is
  decided in integer arithmetic along an arc-length-like parameter of the line.
* ``"brute"``: a vectorised float prefilter over all cells, then an exact test
  that parametrises the line by a coordinate and minimises the squared distance
  to the centre over the admissible segment.

Scales that a lemma states as non-dyadic lower scales (``3 delta``, ``50 Delta^j``)
are rounded up to the next dyadic scale; ball radii are kept exact.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from fraclab.dyadic import (
    GridSet,
    Point,
    ScaleLadder,
    as_fraction,
    as_point,
    dyadic_ceil_level,
    level_scale,
    scale_level,
)
from fraclab.generators import ArcMeasure, directions_from
from fraclab.measure import GridMeasure
from fraclab.projection import Direction, cell_image


class HypothesisError(ValueError):
    """A lemma's hypothesis is not met; ``witness`` names the offending input."""

    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


@dataclass(frozen=True)
class Pow2:
    """The threshold ``2**exp`` with a rational exponent, compared exactly against counts."""

    exp: Fraction

    def __post_init__(self):
        object.__setattr__(self, "exp", as_fraction(self.exp))

    def __float__(self):
        return 2.0 ** float(self.exp)


def meets(count: int, thr) -> bool:
    """Exact test ``count >= thr`` for rational or ``Pow2`` thresholds."""
    if isinstance(thr, Pow2):
        if count <= 0:
            return False
        p, q = thr.exp.numerator, thr.exp.denominator
        return count**q * 2 ** max(-p, 0) >= 2 ** max(p, 0)
    return count >= as_fraction(thr)


@dataclass(frozen=True)
class ScalePairQuery:
    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        lo, hi = as_fraction(self.lo), as_fraction(self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        scale_level(lo)
        if hi <= 0:
            raise ValueError("upper scale must be positive")

    @property
    def lo_level(self) -> int:
        return scale_level(self.lo)

    @classmethod
    def rounded(cls, lo, hi) -> "ScalePairQuery":
        """Lower scale rounded up to the next dyadic scale; upper scale kept exactly."""
        return cls(level_scale(dyadic_ceil_level(lo)), hi)


def in_unit_ball(p: Point) -> bool:
    return p[0] * p[0] + p[1] * p[1] < 1


# --- direct evaluator -------------------------------------------------------


class FiberIndex:
    """Cells of ``K`` at one level, sorted by the low end of their projected interval."""

    def __init__(self, K: GridSet, theta: Direction, level: int):
        if level > K.level:
            raise ValueError(f"scale 2^-{level} is finer than the set's resolution 2^-{K.level}")
        self.level = level
        self.h = level_scale(level)
        self.ia, self.ib = theta.integer_vector()
        Kd = K.coarsen(level)
        off = min(self.ia, 0) + min(self.ib, 0)
        rows = sorted((self.ia * i + self.ib * j + off, i, j) for i, j in Kd.cells)
        self.tmin = [r[0] for r in rows]
        self.cells = [(r[1], r[2]) for r in rows]
        self.width = abs(self.ia) + abs(self.ib)
        self.norm2 = self.ia * self.ia + self.ib * self.ib

    def count(self, x: Point, radius: Fraction) -> int:
        X, Y = x[0] / self.h, x[1] / self.h
        q = math.lcm(X.denominator, Y.denominator)
        px, py = X.numerator * (q // X.denominator), Y.numerator * (q // Y.denominator)
        R = radius / self.h
        K2 = self.norm2 * R.denominator**2
        B2 = R.numerator**2 * q * q
        ia, ib = self.ia, self.ib
        # t*q = ia*px + ib*py; candidates have tmin*q <= t*q <= (tmin+width)*q
        tq = ia * px + ib * py
        hi_pos = bisect.bisect_right(self.tmin, tq // q)
        lo_pos = bisect.bisect_left(self.tmin, -((-tq) // q) - self.width)
        n = 0
        for k in range(lo_pos, hi_pos):
            i, l = self.cells[k]
            if _hits(px, py, q, ia, ib, i, l, K2, B2):
                n += 1
        return n


def _hits(px, py, q, ia, ib, i, l, K2, B2) -> bool:
    # line: X = (px - ib*s)/q, Y = (py + ia*s)/q; cell [i,i+1) x [l,l+1); ball s^2*K2 < B2
    lo_n, lo_d, lo_c = None, 1, True
    hi_n, hi_d, hi_c = None, 1, True

    def lower(n, d, closed):
        nonlocal lo_n, lo_d, lo_c
        if lo_n is None:
            lo_n, lo_d, lo_c = n, d, closed
            return
        a, b = n * lo_d, lo_n * d
        if a > b:
            lo_n, lo_d, lo_c = n, d, closed
        elif a == b and not closed:
            lo_c = False

    def upper(n, d, closed):
        nonlocal hi_n, hi_d, hi_c
        if hi_n is None:
            hi_n, hi_d, hi_c = n, d, closed
            return
        a, b = n * hi_d, hi_n * d
        if a < b:
            hi_n, hi_d, hi_c = n, d, closed
        elif a == b and not closed:
            hi_c = False

    if ib > 0:
        upper(px - i * q, ib, True)
        lower(px - (i + 1) * q, ib, False)
    elif ib < 0:
        lower(i * q - px, -ib, True)
        upper((i + 1) * q - px, -ib, False)
    elif not (i * q <= px < (i + 1) * q):
        return False
    if ia > 0:
        lower(l * q - py, ia, True)
        upper((l + 1) * q - py, ia, False)
    elif ia < 0:
        upper(py - l * q, -ia, True)
        lower(py - (l + 1) * q, -ia, False)
    elif not (l * q <= py < (l + 1) * q):
        return False
    c = lo_n * hi_d - hi_n * lo_d
    if c > 0 or (c == 0 and not (lo_c and hi_c)):
        return False
    if c == 0:
        return lo_n * lo_n * K2 < B2 * lo_d * lo_d
    left_ok = lo_n <= 0 or lo_n * lo_n * K2 < B2 * lo_d * lo_d
    right_ok = hi_n >= 0 or hi_n * hi_n * K2 < B2 * hi_d * hi_d
    return left_ok and right_ok


@lru_cache(maxsize=512)
def fiber_index(K: GridSet, theta: Direction, level: int) -> FiberIndex:
    return FiberIndex(K, theta, level)


# --- brute-force evaluator --------------------------------------------------


def _hits_by_coordinate(cell, h: Fraction, a: Fraction, b: Fraction, x: Point, radius: Fraction) -> bool:
    # the fibre is {a X + b Y = t}; parametrise by the free coordinate
    x0, y0 = cell[0] * h, cell[1] * h
    x1, y1 = x0 + h, y0 + h
    cx, cy = x
    t = a * cx + b * cy
    r2 = radius * radius
    if b != 0:
        # Y = (t - a X)/b, parameter X in [x0, x1) intersected with Y in [y0, y1)
        lo, lo_c, hi, hi_c = x0, True, x1, False
        if a != 0:
            ends = sorted([((t - b * y0) / a, True), ((t - b * y1) / a, False)], key=lambda e: e[0])
            (p, pc), (q_, qc) = ends
            if p > lo or (p == lo and not pc):
                lo, lo_c = p, pc
            if q_ < hi or (q_ == hi and not qc):
                hi, hi_c = q_, qc
        else:
            Y = t / b
            if not (y0 <= Y < y1):
                return False
        if lo > hi or (lo == hi and not (lo_c and hi_c)):
            return False
        # squared distance to x along the line as a quadratic in X
        k = a / b
        A2 = 1 + k * k
        B1 = -2 * cx - 2 * k * (t / b - cy)
        C0 = cx * cx + (t / b - cy) ** 2 - r2
        vx = -B1 / (2 * A2)
        z = min(max(vx, lo), hi) if lo < hi else lo
        return A2 * z * z + B1 * z + C0 < 0
    X = t / a
    if not (x0 <= X < x1):
        return False
    gy = y0 - cy if cy < y0 else (cy - y1 if cy > y1 else 0)
    if cy >= y1 and cy - y1 == 0:
        gy = 0
    return (X - cx) ** 2 + gy * gy < r2


def brute_counts(K: GridSet, theta: Direction, q: ScalePairQuery, points: list[Point]) -> list[int]:
    """Fibre counts for many points: float prefilter over every cell, exact decision afterwards."""
    level = q.lo_level
    if level > K.level:
        raise ValueError("scale finer than the set's resolution")
    h = level_scale(level)
    cells = K.coarsen(level).cells
    if not cells or not points:
        return [0] * len(points)
    a, b = float(theta.a), float(theta.b)
    cx = np.array([c[0] for c in cells], dtype=float)
    cy = np.array([c[1] for c in cells], dtype=float)
    tlo = a * cx + min(a, 0.0) + b * cy + min(b, 0.0)
    thi = tlo + abs(a) + abs(b)
    hf = float(h)
    P = np.array([[float(p[0]) / hf, float(p[1]) / hf] for p in points])
    R = float(q.hi) / hf
    tol = 1e-9 * (1 + abs(a) + abs(b)) * (1 + np.abs(P).max() + max(np.abs(cx).max(), np.abs(cy).max()))
    out = []
    chunk = max(1, 4_000_000 // len(cells))
    for s in range(0, len(points), chunk):
        sub = P[s : s + chunk]
        tp = a * sub[:, :1] + b * sub[:, 1:2]
        mask = (tlo[None, :] - tol <= tp) & (tp <= thi[None, :] + tol)
        mask &= np.abs(cx[None, :] + 0.5 - sub[:, :1]) <= R + 1 + tol
        mask &= np.abs(cy[None, :] + 0.5 - sub[:, 1:2]) <= R + 1 + tol
        for r, row in enumerate(mask):
            x = points[s + r]
            n = 0
            for k in np.flatnonzero(row):
                if _hits_by_coordinate(cells[k], h, theta.a, theta.b, x, q.hi):
                    n += 1
            out.append(n)
    return out


# --- public operations ------------------------------------------------------


def multiplicity_at(K: GridSet, theta: Direction, x, q: ScalePairQuery, method: str = "direct") -> int:
    x = as_point(x)
    if method == "direct":
        return fiber_index(K, theta, q.lo_level).count(x, q.hi)
    if method == "brute":
        return brute_counts(K, theta, q, [x])[0]
    raise ValueError(f"unknown method {method!r}")


def multiplicity_field(K: GridSet, theta: Direction, q: ScalePairQuery, points, method: str = "direct") -> list[int]:
    points = [as_point(p) for p in points]
    if method == "brute":
        return brute_counts(K, theta, q, points)
    idx = fiber_index(K, theta, q.lo_level)
    return [idx.count(p, q.hi) for p in points]


@dataclass(frozen=True)
class MultiplicityField:
    theta: Direction
    query: ScalePairQuery
    values: dict

    @classmethod
    def evaluate(cls, K: GridSet, theta: Direction, q: ScalePairQuery, domain: GridSet | None = None, method="direct"):
        domain = K if domain is None else domain
        pts = [domain.center(c) for c in domain.cells]
        vals = multiplicity_field(K, theta, q, pts, method)
        return cls(theta, q, dict(zip(pts, vals)))


def high_mult_set(K: GridSet, theta: Direction, Nthr, q: ScalePairQuery, domain: GridSet | None = None, method="direct") -> GridSet:
    """Cells of ``domain`` (default: ``K``) whose centres have multiplicity ``>= Nthr``."""
    domain = K if domain is None else domain
    pts = [domain.center(c) for c in domain.cells]
    vals = multiplicity_field(K, theta, q, pts, method)
    return domain.with_cells(c for c, v in zip(domain.cells, vals) if meets(v, Nthr))


def _ball_one_mass(mu: GridMeasure, cells) -> Fraction:
    return mu.mantissa_mass(c for c in cells if in_unit_ball(mu.support.center(c)))


def iota_integrand(mu: GridMeasure, nu: ArcMeasure, sigma, delta, spacing=None, method: str = "direct") -> Fraction:
    """Sum over directions of ``nu``-mass times the ``mu``-mass of ``B(1)`` inside the high set.

    The threshold is ``delta^-sigma`` and the scales are ``[delta, 1]``.  ``mu`` is
    treated through its rational weights (its scale factor is ignored).
    """
    sigma = as_fraction(sigma)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    j = scale_level(delta)
    K = mu.support
    if j > K.level:
        raise ValueError("delta finer than the measure's resolution")
    spacing = level_scale(nu.level) if spacing is None else spacing
    thr = Pow2(j * sigma)
    q = ScalePairQuery(delta, 1)
    inner = mu.support.with_cells(c for c in K.cells if in_unit_ball(K.center(c)))
    total = Fraction(0)
    for theta, mass in directions_from(nu, spacing):
        H = high_mult_set(K, theta, thr, q, domain=inner, method=method)
        total += mass * mu.mantissa_mass(H.cells)
    return total


def unit_ball_mass(mu: GridMeasure) -> Fraction:
    return _ball_one_mass(mu, mu.support.cells)


# --- Lemma-style checkers ---------------------------------------------------


@dataclass(frozen=True)
class InclusionReport:
    name: str
    holds: bool
    witness: object = None


def monotonicity_inclusions(K: GridSet, theta: Direction, M, N, delta, Delta, C: int, domain=None) -> list[InclusionReport]:
    """Three inclusions for ``M <= N``, ``C >= 1`` dyadic and ``C*delta <= Delta``.

    The trade in the third inclusion is checked twice: with threshold ``M/C`` as
    usually stated and with ``M/(2C - 1)``, the exact factor for dyadic counts (a
    segment crosses at most ``2C - 1`` children of a ``C``-times larger cell).
    """
    M, N = as_fraction(M), as_fraction(N)
    delta, Delta = as_fraction(delta), as_fraction(Delta)
    if not (M <= N and C >= 1 and C * delta <= Delta):
        raise ValueError("need M <= N, C >= 1 and C*delta <= Delta")
    q = ScalePairQuery(delta, Delta)
    qC = ScalePairQuery(delta, C * Delta)
    qd = ScalePairQuery(C * delta, Delta)
    domain = K if domain is None else domain
    HN = high_mult_set(K, theta, N, q, domain)
    HM = high_mult_set(K, theta, M, q, domain)
    HMC = high_mult_set(K, theta, M, qC, domain)
    Hlit = high_mult_set(K, theta, M / C, qd, domain)
    Hdy = high_mult_set(K, theta, M / (2 * C - 1), qd, domain)

    def rep(name, A, B):
        diff = A.difference(B)
        return InclusionReport(name, not diff.cells, diff.cells[0] if diff.cells else None)

    return [
        rep("N_monotone", HN, HM),
        rep("upper_scale", HM, HMC),
        rep("trade_literal", HM, Hlit),
        rep("trade_dyadic", HM, Hdy),
    ]


@dataclass
class LowMultiplicityProfile:
    theta: Direction
    ladder: ScaleLadder
    lam: Fraction
    sigma0: Fraction
    A: Fraction
    bad: dict
    scales: list
    L: GridSet
    mass_outside: Fraction

    def density(self, cell) -> Fraction:
        return Fraction(len(self.bad[cell]), self.ladder.N)


def low_mult_profile(mu: GridMeasure, theta: Direction, ladder: ScaleLadder, sigma0, lam, A=1) -> LowMultiplicityProfile:
    """Bad scales ``j in 0..N-1`` where the centre lies in the high set at ``[A Delta^{j+1}, A Delta^j]``."""
    sigma0, lam, A = as_fraction(sigma0), as_fraction(lam), as_fraction(A)
    K = mu.support
    thr = Pow2(ladder.m * sigma0)
    bad = {c: set() for c in K.cells}
    pts = [K.center(c) for c in K.cells]
    scales = []
    for j in range(ladder.N):
        q = ScalePairQuery.rounded(A * ladder.scale(j + 1), A * ladder.scale(j))
        scales.append((q.lo, q.hi))
        for c, v in zip(K.cells, multiplicity_field(K, theta, q, pts)):
            if meets(v, thr):
                bad[c].add(j)
    bad = {c: frozenset(v) for c, v in bad.items()}
    L = K.with_cells(c for c in K.cells if Fraction(len(bad[c]), ladder.N) <= lam)
    outside = K.difference(L)
    return LowMultiplicityProfile(theta, ladder, lam, sigma0, A, bad, scales, L, _ball_one_mass(mu, outside.cells))


@dataclass
class RefineResult:
    G: GridSet
    M_prime: Fraction
    mass_F: Fraction
    mass_G: Fraction
    mass_ok: bool
    mult_ok: bool
    min_multiplicity: int | None
    heavy_tubes: list = field(default_factory=list)


def _tube_counts(F: GridSet, theta: Direction, level: int) -> dict[int, int]:
    w = level_scale(level)
    counts: dict[int, int] = {}
    for c in F.coarsen(level).cells:
        lo, lc, hi, hc = cell_image(theta, level, c)
        k0 = math.floor(lo / w)
        qh = hi / w
        k1 = math.floor(qh) - (1 if qh == math.floor(qh) and not hc else 0)
        if lo == hi and not (lc and hc):
            continue
        for k in range(k0, k1 + 1):
            counts[k] = counts.get(k, 0) + 1
    return counts


def hereditary_refine(mu: GridMeasure, F: GridSet, theta: Direction, M, delta, kappa, c=1, C=1) -> RefineResult:
    """Keep the part of ``F`` lying in doubled heavy ``delta``-tubes.

    ``M' = c * C^-2 * kappa * M``; a tube is heavy when at least ``M'`` of the
    ``delta``-cells of ``F`` meet it.  The result's flags record whether
    ``mu(G) >= mu(F)/2`` and whether every centre of ``G`` has multiplicity at
    least ``M'`` in ``G`` at scales ``[4 delta, 4]``.
    """
    M, kappa, c, C = (as_fraction(v) for v in (M, kappa, c, C))
    K = mu.support
    if F.level != K.level or not F.issubset(K):
        raise HypothesisError("F must be a subset of the support at the same resolution")
    j = scale_level(delta)
    q = ScalePairQuery(delta, 1)
    for cell in F.cells:
        x = F.center(cell)
        if not in_unit_ball(x):
            raise HypothesisError(f"F cell {cell} lies outside B(1)", cell)
        v = multiplicity_at(K, theta, x, q)
        if v < M:
            raise HypothesisError(f"F cell {cell} has multiplicity {v} < M = {M}", cell)
    mF = mu.mantissa_mass(F.cells)
    if mF < kappa:
        raise HypothesisError(f"mu(F) = {mF} < kappa = {kappa}", mF)
    Mp = c * kappa * M / (C * C)
    counts = _tube_counts(F, theta, j)
    heavy = sorted(k for k, n in counts.items() if n >= Mp and n > 0)
    w = level_scale(j)
    heavy_set = set(heavy)
    keep = []
    for cell in F.cells:
        t = theta.project(F.center(cell))
        # doubled tube of index k is [k w - w/2, (k+1) w + w/2)
        k_lo = math.floor((t - w - w / 2) / w)
        k_hi = math.floor((t + w / 2) / w)
        for k in range(k_lo, k_hi + 1):
            if k in heavy_set and k * w - w / 2 <= t < (k + 1) * w + w / 2:
                keep.append(cell)
                break
    G = F.with_cells(keep)
    mG = mu.mantissa_mass(G.cells)
    mins = None
    mult_ok = True
    if G.cells:
        q4 = ScalePairQuery(4 * w, 4)
        vals = multiplicity_field(G, theta, q4, [G.center(x) for x in G.cells])
        mins = min(vals)
        mult_ok = mins >= Mp
    return RefineResult(G, Mp, mF, mG, 2 * mG >= mF, mult_ok, mins, heavy)


@dataclass
class DecompositionReport:
    lhs: Fraction
    first: Fraction
    third: Fraction
    rhs: Fraction
    slack: Fraction
    holds: bool
    c: Fraction
    largest_c: Fraction | None
    scales: dict


def check_mult_decomposition(
    mu: GridMeasure, K: GridSet, theta: Direction, A, kappa, M, N, delta, Delta, c=Fraction(1, 64), C=1, inflate=3
) -> DecompositionReport:
    """Evaluate both sides of the multiplicity decomposition inequality on ``mu``'s support centres.

    ``inflate`` is the ball factor written as 3 in the statement; lower scales
    ``inflate*delta`` are rounded up to dyadic.  ``largest_c`` is the supremum of
    admissible ``c`` (``None`` when every ``c`` works).
    """
    A, kappa, M, N, c, C, inflate = (as_fraction(v) for v in (A, kappa, M, N, c, C, inflate))
    delta, Delta = as_fraction(delta), as_fraction(Delta)
    if not (1 <= M <= N) or delta > Delta:
        raise ValueError("need 1 <= M <= N and delta <= Delta")
    pts = [c_ for c_ in mu.support.cells if in_unit_ball(mu.support.center(c_))]
    centers = [mu.support.center(c_) for c_ in pts]
    qA = ScalePairQuery(delta, A)
    q1 = ScalePairQuery.rounded(inflate * delta, inflate * Delta)
    q3 = ScalePairQuery(Delta, inflate)
    vA = multiplicity_field(K, theta, qA, centers)
    v1 = multiplicity_field(K, theta, q1, centers)
    v3 = multiplicity_field(K, theta, q3, centers)
    w = [mu.weights[x] for x in pts]
    inN = [meets(v, N) for v in vA]
    lhs = sum((wi for wi, f in zip(w, inN) if f), Fraction(0))
    first = sum((wi for wi, v in zip(w, v1) if meets(v, M)), Fraction(0))
    K0 = kappa * kappa * N / (A * A * C**3 * M)
    thr = c * K0
    third = sum((wi for wi, f, v in zip(w, inN, v3) if f and meets(v, thr)), Fraction(0))
    rhs = (1 + kappa) * first + kappa + third
    need = lhs - (1 + kappa) * first - kappa
    largest = None
    if need > 0:
        cand = sorted(((v, wi) for wi, f, v in zip(w, inN, v3) if f), key=lambda t: -t[0])
        acc = Fraction(0)
        largest = Fraction(0)
        for v, wi in cand:
            acc += wi
            if acc >= need:
                largest = Fraction(v) / K0 if K0 else None
                break
    scales = {"lhs": (qA.lo, qA.hi), "first": (q1.lo, q1.hi), "third": (q3.lo, q3.hi)}
    return DecompositionReport(lhs, first, third, rhs, rhs - lhs, lhs <= rhs, c, largest, scales)


def max_fiber_count(F: GridSet, theta: Direction, level: int) -> tuple[int, Fraction | None]:
    """Largest number of level-``level`` cells of ``F`` met by one fibre, and a maximising value."""
    cells = F.coarsen(level).cells
    if not cells:
        return 0, None
    loc, loo, hic, hio, cands = [], [], [], [], set()
    for c in cells:
        lo, lc, hi, hc = cell_image(theta, level, c)
        (loc if lc else loo).append(lo)
        (hic if hc else hio).append(hi)
        cands.update((lo, hi))
    for v in (loc, loo, hic, hio):
        v.sort()
    pts = sorted(cands)
    pts += [(a + b) / 2 for a, b in zip(pts, pts[1:])]
    best, arg = 0, None
    for t in pts:
        n = (
            bisect.bisect_right(loc, t)
            + bisect.bisect_left(loo, t)
            - bisect.bisect_left(hic, t)
            - bisect.bisect_right(hio, t)
        )
        if n > best:
            best, arg = n, t
    return best, arg


@dataclass
class FiberEntropyReport:
    lhs: int
    rhs: float
    holds: bool
    C: float
    C_min: float
    fibre_value: Fraction | None
    bad_sums: dict
    scales: list


def check_fiber_entropy_bound(
    F: GridSet, theta: Direction, ladder: ScaleLadder, partition, sigma, eta, C=8, inflate=50, fiber_scale=5
) -> FiberEntropyReport:
    """Check the fibre-count bound after verifying the bad-block hypothesis at every centre of ``F``."""
    a = [int(v) for v in partition]
    if a[0] != 0 or a[-1] != ladder.N or any(x >= y for x, y in zip(a, a[1:])):
        raise ValueError("partition must be 0 = a_0 < ... < a_n = N")
    sigma, eta, C = as_fraction(sigma), as_fraction(eta), float(C)
    pts = [F.center(c) for c in F.cells]
    for c, x in zip(F.cells, pts):
        if not in_unit_ball(x):
            raise HypothesisError(f"F cell {c} lies outside B(1)", c)
    n = len(a) - 1
    sums = {c: 0 for c in F.cells}
    scales = []
    for j in range(n):
        gap = a[j + 1] - a[j]
        q = ScalePairQuery.rounded(inflate * ladder.scale(a[j + 1]), inflate * ladder.scale(a[j]))
        if q.lo_level > F.level:
            raise ValueError("block scale finer than the set's resolution")
        scales.append((q.lo, q.hi))
        thr = Pow2(ladder.m * gap * sigma)
        for c, v in zip(F.cells, multiplicity_field(F, theta, q, pts)):
            if meets(v, thr):
                sums[c] += gap
    limit = eta * ladder.N
    for c in F.cells:
        if sums[c] > limit:
            raise HypothesisError(f"bad blocks at {F.center(c)} sum to {sums[c]} > eta*N = {limit}", F.center(c))
    flevel = dyadic_ceil_level(fiber_scale * ladder.delta)
    lhs, t = max_fiber_count(F, theta, flevel)
    log_delta_inv = ladder.m * ladder.N
    expo = float((sigma + eta) * log_delta_inv)
    rhs = C**n * 2.0**expo
    cmin = 1.0
    if lhs > 0:
        cmin = max(1.0, 2.0 ** ((math.log2(lhs) - expo) / n))
    return FiberEntropyReport(lhs, rhs, lhs <= rhs, C, cmin, t, sums, scales)


def rescale_point(x: Point, z0, r0) -> Point:
    z0 = as_point(z0)
    r0 = as_fraction(r0)
    return ((x[0] - z0[0]) / r0, (x[1] - z0[1]) / r0)
