"""Entropy and Kullback-Leibler divergence over dyadic partitions, and scale/cube extraction.

Entropies are in bits.  A *partition* is given as a dyadic level (an int), as a
list of disjoint atom collections (e.g. one level of a cube family), or as a
callable mapping atoms to part labels.  Atoms are support cells of a
:class:`GridMeasure` or interval indices of an :class:`ArcMeasure`.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from fractions import Fraction

from fraclab.dyadic import GridSet, ScaleLadder, as_fraction, scale_level
from fraclab.generators import ArcMeasure
from fraclab.measure import GridMeasure
from fraclab.multiplicity import HypothesisError

IDENTITY_TOL = 1e-12


def _atoms(mu) -> dict:
    if isinstance(mu, (GridMeasure, ArcMeasure)):
        return mu.weights
    if isinstance(mu, Mapping):
        return {k: as_fraction(v) for k, v in mu.items() if as_fraction(v)}
    raise TypeError(f"unsupported measure type {type(mu).__name__}")


def _require_probability(mu) -> dict:
    w = _atoms(mu)
    if isinstance(mu, GridMeasure) and mu.log2_scale != 0:
        raise ValueError("measure carries a scale factor; normalise first")
    total = sum(w.values(), Fraction(0))
    if total != 1:
        raise ValueError(f"not a probability measure (mass {total})")
    return w


def labeller(mu, partition) -> Callable:
    """Map atoms of ``mu`` to part labels for the given partition description."""
    if isinstance(partition, int):
        if isinstance(mu, GridMeasure):
            s = mu.level - partition
            if s < 0:
                raise ValueError("partition finer than the measure's resolution")
            return lambda c: (c[0] >> s, c[1] >> s)
        if isinstance(mu, ArcMeasure):
            s = mu.level - partition
            if s < 0:
                raise ValueError("partition finer than the measure's resolution")
            return lambda i: i >> s
        raise TypeError("dyadic levels need a GridMeasure or ArcMeasure")
    if callable(partition):
        return partition
    table = {}
    for k, part in enumerate(partition):
        for a in part:
            if a in table:
                raise ValueError(f"atom {a} lies in two parts")
            table[a] = k
    def lab(a):
        try:
            return table[a]
        except KeyError:
            raise ValueError(f"atom {a} not covered by the partition") from None
    return lab


def part_masses(mu, partition) -> dict:
    lab = labeller(mu, partition)
    out: dict = {}
    for a, v in _atoms(mu).items():
        k = lab(a)
        out[k] = out.get(k, Fraction(0)) + v
    return out


def _h(masses) -> float:
    return math.fsum(-float(p) * math.log2(p) for p in masses if p)


def entropy(mu, partition) -> float:
    """``sum mu(F) log2 1/mu(F)`` over the parts."""
    _require_probability(mu)
    return _h(part_masses(mu, partition).values())


def conditional_entropy(mu, fine, coarse) -> float:
    """``sum_E mu(E) H(mu_E, fine)``, evaluated from the definition (not as a difference)."""
    w = _require_probability(mu)
    lf, lc = labeller(mu, fine), labeller(mu, coarse)
    groups: dict = {}
    for a, v in w.items():
        g = groups.setdefault(lc(a), {})
        k = lf(a)
        g[k] = g.get(k, Fraction(0)) + v
    terms = []
    for g in groups.values():
        mE = sum(g.values(), Fraction(0))
        terms.append(float(mE) * _h(v / mE for v in g.values()))
    return math.fsum(terms)


def _kl_terms(nu_parts: dict, mu_parts: dict):
    for k, p in nu_parts.items():
        if p == 0:
            continue
        q = mu_parts.get(k, Fraction(0))
        if q == 0:
            raise ValueError(f"not absolutely continuous: part {k} has nu-mass {p} but mu-mass 0")
        yield float(p) * (math.log2(p.numerator) - math.log2(p.denominator) - math.log2(q.numerator) + math.log2(q.denominator))


def kl_divergence(nu, mu, partition) -> float:
    """``sum nu(E) log2(nu(E)/mu(E))``; raises if some part has ``nu > 0 = mu``."""
    _require_probability(nu)
    _require_probability(mu)
    return math.fsum(_kl_terms(part_masses(nu, partition), part_masses(mu, partition)))


def kl_conditional(nu, mu, fine, coarse) -> float:
    """``sum_F nu(F) D_{mu_F}(nu_F, fine)`` from the definition."""
    wn, wm = _require_probability(nu), _require_probability(mu)
    fn, cn = labeller(nu, fine), labeller(nu, coarse)
    fm, cm = labeller(mu, fine), labeller(mu, coarse)

    def grouped(w, lf, lc):
        out: dict = {}
        for a, v in w.items():
            g = out.setdefault(lc(a), {})
            k = lf(a)
            g[k] = g.get(k, Fraction(0)) + v
        return out

    gn, gm = grouped(wn, fn, cn), grouped(wm, fm, cm)
    terms = []
    for F, parts in gn.items():
        nF = sum(parts.values(), Fraction(0))
        if nF == 0:
            continue
        mparts = gm.get(F)
        if not mparts:
            raise ValueError(f"not absolutely continuous: coarse part {F} has mu-mass 0")
        mF = sum(mparts.values(), Fraction(0))
        inner = math.fsum(_kl_terms({k: v / nF for k, v in parts.items()}, {k: v / mF for k, v in mparts.items()}))
        terms.append(float(nF) * inner)
    return math.fsum(terms)


@dataclass(frozen=True)
class PartialSumReport:
    partial_sum: float
    aggregate: float
    holds: bool


def partial_sum_bound(nu, mu, collection, partition) -> PartialSumReport:
    """For parts ``collection`` of ``partition``: ``sum nu(E)log(nu(E)/mu(E)) >= nu(G)log(nu(G)/mu(G)) >= -1``."""
    pn, pm = part_masses(nu, partition), part_masses(mu, partition)
    sel = {k: pn.get(k, Fraction(0)) for k in collection}
    nG = sum(sel.values(), Fraction(0))
    if nG == 0:
        raise ValueError("the collection has zero nu-mass")
    mG = sum((pm.get(k, Fraction(0)) for k in collection), Fraction(0))
    ps = math.fsum(_kl_terms(sel, pm))
    agg = next(_kl_terms({0: nG}, {0: mG}))
    return PartialSumReport(ps, agg, ps >= agg - IDENTITY_TOL and agg >= -1 - IDENTITY_TOL)


@dataclass(frozen=True)
class PartitionLadder:
    """Nested dyadic levels, coarsest first."""

    levels: tuple

    def __post_init__(self):
        lv = tuple(int(v) for v in self.levels)
        if any(a > b for a, b in zip(lv, lv[1:])):
            raise ValueError("levels must be non-decreasing (each refines the previous)")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def from_ladder(cls, ladder: ScaleLadder) -> "PartitionLadder":
        return cls(tuple(ladder.level(j) for j in range(ladder.N + 1)))


@dataclass
class EntropyProfile:
    levels: tuple
    entropies: list
    conditional: list
    differences: list

    @property
    def max_identity_error(self) -> float:
        return max((abs(a - b) for a, b in zip(self.conditional, self.differences)), default=0.0)


def entropy_profile(mu, ladder: PartitionLadder | ScaleLadder) -> EntropyProfile:
    if isinstance(ladder, ScaleLadder):
        ladder = PartitionLadder.from_ladder(ladder)
    lv = ladder.levels
    H = [entropy(mu, j) for j in lv]
    cond = [conditional_entropy(mu, b, a) for a, b in zip(lv, lv[1:])]
    diff = [y - x for x, y in zip(H, H[1:])]
    return EntropyProfile(lv, H, cond, diff)


# --- exact comparisons against powers of two --------------------------------


def frac_ge_pow2(x: Fraction, e: Fraction) -> bool:
    """Exact test ``x >= 2**e`` for rational ``x >= 0`` and rational ``e``."""
    if x <= 0:
        return False
    p, q = e.numerator, e.denominator
    n, d = x.numerator, x.denominator
    return n**q * 2 ** max(-p, 0) >= d**q * 2 ** max(p, 0)


def frac_le_pow2(x: Fraction, e: Fraction) -> bool:
    if x <= 0:
        return True
    p, q = e.numerator, e.denominator
    n, d = x.numerator, x.denominator
    return n**q * 2 ** max(-p, 0) <= d**q * 2 ** max(p, 0)


# --- good scales ------------------------------------------------------------


@dataclass
class GoodScalesReport:
    good: list
    conditional: list
    threshold: float
    required: float
    ok: bool
    in_regime: bool
    regime_note: str
    branching_constant: Fraction
    finite_bad_bound: float


def good_scales(K: GridSet | GridMeasure, ladder: ScaleLadder, s, eps, C=None) -> GoodScalesReport:
    """Indices ``j`` with ``H(mu_bar, D_{Delta^{j+1}} | D_{Delta^j}) >= (s - sqrt(eps)) log2(1/Delta)``.

    ``mu_bar`` is uniform on the ``delta``-cells of ``K``.  The count is asserted
    to reach ``(1 - 2 sqrt(eps)) N`` only when ``log2(1/Delta) >= C/eps``.  Every
    run also checks the finite-scale bound ``bad/N <= sqrt(eps) + log2(Cb)/(sqrt(eps) m)``
    where ``Cb`` is the largest child count of a ``Delta^j``-cell divided by ``Delta^-s``.
    """
    s, eps = as_fraction(s), as_fraction(eps)
    if isinstance(K, GridMeasure):
        K = K.support
    Kd = K.coarsen(ladder.level(ladder.N))
    n = len(Kd)
    mN = ladder.m * ladder.N
    if not frac_ge_pow2(Fraction(n), (s - eps) * mN):
        raise HypothesisError(f"|K|_delta = {n} < delta^(-s+eps) = 2^{float((s - eps) * mN):.4g}", n)
    mu = GridMeasure.uniform(Kd)
    lv = [ladder.level(j) for j in range(ladder.N + 1)]
    cond = [conditional_entropy(mu, b, a) for a, b in zip(lv, lv[1:])]
    rt = math.sqrt(float(eps))
    thr = (float(s) - rt) * ladder.m
    good = [j for j, h in enumerate(cond) if h >= thr - IDENTITY_TOL]
    required = (1 - 2 * rt) * ladder.N
    # largest branching relative to Delta^-s, over all levels
    cb = Fraction(0)
    for a, b in zip(lv, lv[1:]):
        kids: dict = {}
        for c in Kd.coarsen(b).cells:
            key = (c[0] >> (b - a), c[1] >> (b - a))
            kids[key] = kids.get(key, 0) + 1
        cb = max(cb, Fraction(max(kids.values())))
    Cb = float(cb) * 2.0 ** (-float(s) * ladder.m)
    finite = rt + max(math.log2(Cb), 0.0) / (rt * ladder.m) if rt > 0 else math.inf
    if C is None:
        C = max(Cb, 1.0)
    need = float(C) / float(eps) if eps > 0 else math.inf
    in_regime = ladder.m >= need
    note = f"log2(1/Delta) = {ladder.m} {'>=' if in_regime else '<'} C/eps = {need:.4g}"
    ok = len(good) >= required - IDENTITY_TOL
    return GoodScalesReport(good, cond, thr, required, ok, in_regime, note, cb, finite)


# --- good cubes -------------------------------------------------------------


@dataclass
class GoodCubesReport:
    cubes: list
    mass: Fraction
    target: Fraction
    ok: bool
    c: Fraction
    C: Fraction
    in_regime: bool
    regime_note: str
    largest_c: float | None


def good_cubes(mu: GridMeasure, Delta, s, eps, H, c=None, C=None) -> GoodCubesReport:
    """``Delta``-cells ``Q`` with ``c Delta^s <= mu(Q) <= Delta^(s - H eps)`` and their total mass."""
    s, eps, H = as_fraction(s), as_fraction(eps), as_fraction(H)
    j = scale_level(Delta)
    w = _require_probability(mu)
    parts = part_masses(mu, j)
    if entropy(mu, j) < float((s - eps) * j) - IDENTITY_TOL:
        raise HypothesisError(f"H(mu, D_Delta) < (s - eps) log2(1/Delta)", j)
    count = len(parts)
    Cmin = Fraction(count) if s == 0 else None
    if C is None:
        # smallest admissible C = |spt mu|_Delta * Delta^s, rounded up to a rational
        C = Cmin if Cmin is not None else Fraction(count * 2.0 ** (-float(s) * j)).limit_denominator(1 << 20)
        while not frac_le_pow2(Fraction(count) / C, s * j):
            C += Fraction(1, 1 << 20)
    C = as_fraction(C)
    if not frac_le_pow2(Fraction(count) / C, s * j):
        raise HypothesisError(f"|spt mu|_Delta = {count} > C Delta^-s", count)
    if c is None:
        c = eps / (16 * C * s) if s > 0 else Fraction(1, 16)
    c = as_fraction(c)
    upper_ok = {Q for Q, m in parts.items() if frac_le_pow2(m, (s - H * eps) * -j)}
    good = sorted(Q for Q in upper_ok if frac_ge_pow2(parts[Q] / c, -s * j))
    mass = sum((parts[Q] for Q in good), Fraction(0))
    target = 1 - 3 / H
    kappa = math.log2(1 / float(c)) / j if j > 0 else math.inf
    in_regime = kappa <= float(eps) and math.log2(1 / float(c)) <= float(s) * j
    note = f"log2(1/c)/log2(1/Delta) = {kappa:.4g} {'<=' if kappa <= float(eps) else '>'} eps = {float(eps)}"
    largest = None
    acc = Fraction(0)
    for Q in sorted(upper_ok, key=lambda Q: -parts[Q]):
        acc += parts[Q]
        if acc >= target:
            largest = float(parts[Q]) * 2.0 ** (float(s) * j)
            break
    return GoodCubesReport(good, mass, target, mass >= target, c, C, in_regime, note, largest)


# --- pigeonholing over a partition ladder -----------------------------------


@dataclass
class PigeonholeResult:
    F: list
    mass: Fraction
    good_levels: list
    heavy: dict
    level_sums: list
    counts: dict
    ok: bool
    checks: dict = field(default_factory=dict)


def partition_pigeonhole(mu, partitions, Hsets, d_frac) -> PigeonholeResult:
    """Find ``F`` with ``mu(F) >= d^2/16`` whose points see ``>= d^2 N/16`` heavy ancestors.

    ``partitions`` lists ``N`` partition descriptions ``D_0..D_{N-1}``; ``Hsets``
    maps ``(j, part label)`` to the atoms of ``H(Q)`` (atoms outside ``Q`` are
    ignored).  The hypothesis ``#{j : x in H(Q_j(x))} >= d N`` is verified at
    every atom of positive mass first.
    """
    w = _require_probability(mu)
    d = as_fraction(d_frac)
    N = len(partitions)
    labs = [labeller(mu, p) for p in partitions]
    H = {k: frozenset(v) for k, v in dict(Hsets).items()}
    hits = {}
    for a in w:
        hits[a] = [a in H.get((j, labs[j](a)), ()) for j in range(N)]
        n = sum(hits[a])
        if n < d * N:
            raise HypothesisError(f"atom {a} lies in H(Q_j) on {n} < d*N = {d * N} levels", a)
    sums, good, heavy = [], [], {}
    for j in range(N):
        mQ: dict = {}
        mH: dict = {}
        for a, v in w.items():
            k = labs[j](a)
            mQ[k] = mQ.get(k, Fraction(0)) + v
            if hits[a][j]:
                mH[k] = mH.get(k, Fraction(0)) + v
        S = sum(mH.values(), Fraction(0))
        sums.append(S)
        if S >= d / 2:
            good.append(j)
            heavy[j] = {k for k in mQ if mH.get(k, Fraction(0)) >= d / 4 * mQ[k]}
    counts = {a: sum(1 for j in good if labs[j](a) in heavy[j]) for a in w}
    need = d * d * N / 16
    F = sorted(a for a, n in counts.items() if n >= need)
    mass = sum((w[a] for a in F), Fraction(0))
    heavy_mass = {
        j: sum((v for a, v in w.items() if labs[j](a) in heavy[j]), Fraction(0)) for j in good
    }
    checks = {
        "good_levels": 2 * len(good) >= d * N,
        "heavy_mass": all(m >= d / 4 for m in heavy_mass.values()),
        "F_mass": mass >= d * d / 16,
    }
    return PigeonholeResult(F, mass, good, heavy, sums, counts, all(checks.values()), checks)
