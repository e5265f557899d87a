"""Uniform sets, branching numbers, interval decompositions, branching scales and delta-measures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from fraclab.dyadic import GridSet, ScaleLadder, as_fraction, level_scale, scale_level
from fraclab.entropy import conditional_entropy, frac_ge_pow2, frac_le_pow2, good_scales, entropy
from fraclab.generators import ArcMeasure, arc_frostman_constant
from fraclab.multiplicity import HypothesisError, Pow2, ScalePairQuery, multiplicity_field
from fraclab.projection import Direction, project_cover

# --- uniform sets -----------------------------------------------------------


@dataclass(frozen=True)
class BranchingReport:
    is_uniform: bool
    R: tuple
    violation: tuple | None = None

    @property
    def size(self) -> int:
        return math.prod(self.R)


def _check_points(points, ladder: ScaleLadder) -> tuple:
    top = 2 ** (ladder.m * ladder.N)
    pts = tuple(sorted({int(p) for p in points}))
    if pts and not (0 <= pts[0] and pts[-1] < top):
        raise ValueError(f"lattice points must lie in 0..{top - 1}")
    return pts


def branching_numbers(points, ladder: ScaleLadder) -> BranchingReport:
    """Child counts per level; uniform when every level-``j`` interval has the same count.

    ``points`` are lattice indices ``k`` standing for ``k * delta``.  The report's
    ``violation`` is ``(j, interval index, count, expected)`` for the first
    deepest-level mismatch.
    """
    pts = _check_points(points, ladder)
    m, N = ladder.m, ladder.N
    if not pts:
        return BranchingReport(False, (), (0, None, 0, None))
    R = []
    violation = None
    for j in range(N):
        children: dict[int, set] = {}
        for k in pts:
            children.setdefault(k >> (m * (N - j)), set()).add(k >> (m * (N - j - 1)))
        counts = {I: len(c) for I, c in children.items()}
        first = counts[min(counts)]
        for I in sorted(counts):
            if counts[I] != first and (violation is None or j > violation[0]):
                violation = (j, I, counts[I], first)
                break
        R.append(first)
    if violation is not None:
        return BranchingReport(False, tuple(R), violation)
    if math.prod(R) != len(pts):
        raise AssertionError("uniform set size differs from the product of branching numbers")
    return BranchingReport(True, tuple(R))


@dataclass(frozen=True)
class UniformSet1D:
    ladder: ScaleLadder
    points: tuple
    R: tuple

    def __post_init__(self):
        rep = branching_numbers(self.points, self.ladder)
        if not rep.is_uniform:
            raise ValueError(f"not uniform: {rep.violation}")
        if tuple(self.R) != rep.R:
            raise ValueError(f"branching numbers {self.R} do not match {rep.R}")

    @classmethod
    def from_points(cls, points, ladder: ScaleLadder) -> "UniformSet1D":
        pts = _check_points(points, ladder)
        return cls(ladder, pts, branching_numbers(pts, ladder).R)


@dataclass(frozen=True)
class UniformizeResult:
    uniform: UniformSet1D
    ratio: Fraction
    classes: tuple


def uniformize(points, ladder: ScaleLadder) -> UniformizeResult:
    """Uniform subset by keeping, level by level, the most populous dyadic class of child counts.

    Levels are processed from the finest to the coarsest so that removing a
    subtree never disturbs counts already fixed below it.  At each level the
    intervals are bucketed by ``floor(log2(count))``; the class keeping the most
    points wins (ties to the larger class), and every kept interval is trimmed
    to the class's smallest count by keeping its lowest-indexed children.
    """
    pts = _check_points(points, ladder)
    if not pts:
        raise ValueError("cannot uniformize an empty set")
    m, N = ladder.m, ladder.N
    # tree[k] maps a surviving node at the current level to its kept subtree of points
    nodes: dict[int, list] = {k: [k] for k in pts}
    classes = []
    for j in range(N - 1, -1, -1):
        shift = m
        parents: dict[int, list[int]] = {}
        for k in sorted(nodes):
            parents.setdefault(k >> shift, []).append(k)
        by_class: dict[int, list[int]] = {}
        for P, ch in parents.items():
            by_class.setdefault(len(ch).bit_length() - 1, []).append(P)
        leaf = len(next(iter(nodes.values())))

        def score(i):
            ps = by_class[i]
            return (len(ps) * min(len(parents[P]) for P in ps) * leaf, i)

        best = max(by_class, key=score)
        keep_n = min(len(parents[P]) for P in by_class[best])
        classes.append((j, best, keep_n))
        new_nodes = {}
        for P in by_class[best]:
            kids = parents[P][:keep_n]
            new_nodes[P] = [x for c in kids for x in nodes[c]]
        nodes = new_nodes
    kept = sorted(x for v in nodes.values() for x in v)
    U = UniformSet1D.from_points(kept, ladder)
    return UniformizeResult(U, Fraction(len(kept), len(pts)), tuple(reversed(classes)))


# --- dyadic interval decomposition ------------------------------------------


def _merge(E) -> list[tuple[Fraction, Fraction]]:
    iv = sorted((as_fraction(a), as_fraction(b)) for a, b in E)
    out: list[list[Fraction]] = []
    for a, b in iv:
        if not (0 <= a <= b <= 1):
            raise ValueError(f"interval [{a}, {b}] not inside [0, 1]")
        if a == b:
            continue
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


class IntervalMeasure:
    """Lebesgue measure of ``E cap [x, y)`` for a finite union ``E`` of intervals."""

    def __init__(self, E):
        self.iv = _merge(E)
        self.starts = [a for a, _ in self.iv]
        self.prefix = [Fraction(0)]
        for a, b in self.iv:
            self.prefix.append(self.prefix[-1] + (b - a))

    @property
    def total(self) -> Fraction:
        return self.prefix[-1]

    def _cum(self, x: Fraction) -> Fraction:
        import bisect

        i = bisect.bisect_right(self.starts, x)
        if i == 0:
            return Fraction(0)
        a, b = self.iv[i - 1]
        return self.prefix[i - 1] + (min(x, b) - a)

    def measure(self, x, y) -> Fraction:
        return self._cum(as_fraction(y)) - self._cum(as_fraction(x))


@dataclass
class IntervalDecomposition:
    C: Fraction
    gamma: Fraction
    eps: Fraction
    n_steps: int
    rho: Fraction
    G: list
    audit: list
    G_measure: Fraction
    ok_measure: bool
    ok_density: bool
    ok_length: bool
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.ok_measure and self.ok_density and self.ok_length


def decomposition_constants(C, gamma) -> tuple[int, Fraction]:
    """``n``: least with ``(1-gamma)^n <= 1/(4C)``; ``rho``: largest dyadic with ``gamma^-(n+1) rho <= 1/(4C)``."""
    C, gamma = as_fraction(C), as_fraction(gamma)
    n = 0
    while (1 - gamma) ** n > 1 / (4 * C):
        n += 1
    bound = gamma ** (n + 1) / (4 * C)
    k = 0
    while level_scale(k) > bound:
        k += 1
    return n, level_scale(k)


def _sub_intervals(level: int, index: int, depth: int):
    for d in range(depth + 1):
        for t in range(2**d):
            yield level + d, (index << d) + t


def interval_decomposition(E, C, gamma, eps=None) -> IntervalDecomposition:
    """Split ``[0,1)`` into bad/good/short/transient dyadic pieces and return the good ones.

    Each transient ``J`` is tested for a dyadic ``I`` inside it with
    ``|I| >= gamma |J|`` and ``|E cap I| >= 2 C eps |I|``; the longest such ``I``
    (lowest index on ties) is marked bad and the rest of ``J`` is cut into
    ``gamma |J|`` pieces.  Postconditions are verified exhaustively afterwards.
    """
    C, gamma = as_fraction(C), as_fraction(gamma)
    if C < 1:
        raise ValueError("C must be >= 1")
    g = scale_level(gamma)
    if g < 1:
        raise ValueError("gamma must be a dyadic power <= 1/2")
    E = IntervalMeasure(E)
    eps = E.total if eps is None else as_fraction(eps)
    if E.total > eps:
        raise ValueError(f"|E| = {E.total} exceeds eps = {eps}")
    n_steps, rho = decomposition_constants(C, gamma)
    rho_level = scale_level(rho)

    def em(level, index):
        h = level_scale(level)
        return E.measure(index * h, (index + 1) * h)

    T = [(0, 0)]
    G, B, S = [], [], []
    audit = [{"n": 0, "T": Fraction(1), "G": Fraction(0), "B": Fraction(0), "S": Fraction(0), "T_count": 1}]
    for n in range(n_steps):
        nxt = []
        for lv, ix in T:
            bad = None
            for l2, i2 in _sub_intervals(lv, ix, g):
                if em(l2, i2) >= 2 * C * eps * level_scale(l2):
                    bad = (l2, i2)
                    break
            if bad is None:
                G.append((lv, ix))
                continue
            B.append(bad)
            cut = lv + g
            s = cut - bad[0]
            lo, hi = bad[1] << s, (bad[1] + 1) << s
            rest = [(cut, t) for t in range(ix << g, (ix + 1) << g) if not lo <= t < hi]
            (S if cut > rho_level else nxt).extend(rest)
        T = nxt
        size = lambda xs: sum((level_scale(l) for l, _ in xs), Fraction(0))
        audit.append({"n": n + 1, "T": size(T), "G": size(G), "B": size(B), "S": size(S), "T_count": len(T)})
        if not T:
            break
    G.sort(key=lambda J: (J[1] * level_scale(J[0])))
    Gm = sum((level_scale(l) for l, _ in G), Fraction(0))
    violations = []
    for lv, ix in G:
        for l2, i2 in _sub_intervals(lv, ix, g):
            if not em(l2, i2) < 8 * C * eps * level_scale(l2):
                violations.append(((lv, ix), (l2, i2)))
    ok_len = all(level_scale(l) >= rho for l, _ in G)
    for row in audit:
        row["T_bound_ok"] = row["T"] <= (1 - gamma) ** row["n"]
    return IntervalDecomposition(C, gamma, eps, n_steps, rho, G, audit, Gm, Gm >= 1 - 1 / C, not violations, ok_len, violations)


# --- branching scales of Frostman measures on the circle --------------------


def tau_rationals(d_frak, tau) -> tuple[int, list[Fraction]]:
    """Least ``n >= 1`` with ``1/(2 d^(n-1)) <= tau/4`` and the exponents ``(1/2) d^-j``, ``0 <= j <= n``."""
    d, tau = as_fraction(d_frak), as_fraction(tau)
    if d <= 1 or tau <= 0:
        raise ValueError("need d > 1 and tau > 0")
    n = 1
    while 1 / (2 * d ** (n - 1)) > tau / 4:
        n += 1
    return n, [Fraction(1, 2) / d**j for j in range(n + 1)]


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


@dataclass
class BranchingScaleCertificate:
    p: Fraction
    n_frak: int
    level_I: int
    level_J: int
    levels: list
    level_rounding: list
    j_star: int
    entropy_table: list
    entropy_needed: float
    G: list
    G_level: int
    nu_G: Fraction
    mass_bound: float
    ratio_exponent: Fraction
    max_ratio: float
    ok_mass: bool
    ok_ratio: bool
    ok_proof_ratio: bool
    frostman_C: float
    eta: float
    eta_limit: float
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.ok_mass and self.ok_ratio


def _as_probability(nu: ArcMeasure) -> ArcMeasure:
    if nu.mass != 1:
        raise ValueError(f"direction measure must be a probability (mass {nu.mass})")
    return nu


def branching_scale_finder(nu: ArcMeasure, delta, d_frak=2, tau=1, eta=None) -> BranchingScaleCertificate:
    """Locate a scale ``delta^p`` at which ``nu`` branches, restricted to a large subset ``G``.

    The scales ``delta_j = delta^(d^(1-j)/2)`` are rounded to the nearest dyadic
    level (halves rounded up).  The Frostman hypothesis ``nu(B(x,r)) <= delta^-eta r^tau``
    is checked by scan (``eta`` defaults to the smallest admissible value) and must
    satisfy ``eta < tau (d-1)/2``.
    """
    _as_probability(nu)
    d, tau = as_fraction(d_frak), as_fraction(tau)
    L = scale_level(delta)
    n, Q0 = tau_rationals(d, tau)
    exact = [L * Fraction(1, 2) * d ** (1 - j) for j in range(n + 1)]
    levels = [_round_half_up(x) for x in exact]
    if any(a <= b for a, b in zip(levels, levels[1:])) or levels[-1] < 0:
        raise ValueError(f"delta too coarse: rounded scale levels {levels} are not strictly nested")
    fine_level = levels[0]
    fine = nu.refine(fine_level) if nu.level != fine_level else nu
    C_best, _ = arc_frostman_constant(fine, tau)
    eta_needed = max(math.log2(C_best), 0.0) / L
    eta_limit = float(tau * (d - 1) / 2)
    if eta is None:
        eta = eta_needed
    elif eta_needed > float(eta) + 1e-12:
        raise HypothesisError(f"Frostman bound needs eta >= {eta_needed:.4g} > {float(eta)}", eta_needed)
    if not float(eta) < eta_limit:
        raise HypothesisError(f"eta = {float(eta):.4g} is not below tau(d-1)/2 = {eta_limit:.4g}", float(eta))
    table = [conditional_entropy(fine, levels[j], levels[j + 1]) for j in range(n)]
    needed = L * float(tau) / (4 * n)
    j = max(range(n), key=lambda i: (table[i], -i))
    if table[j] < needed - 1e-12:
        raise HypothesisError(f"no admissible level: entropy table {table} below {needed:.4g}", table)
    tbar = tau / (4 * n)
    lI, lJ = levels[j + 1], levels[j]
    w = fine.weights
    by_I: dict[int, dict[int, Fraction]] = {}
    for i, v in w.items():
        g = by_I.setdefault(i >> (fine_level - lI), {})
        Jk = i >> (fine_level - lJ)
        g[Jk] = g.get(Jk, Fraction(0)) + v
    good_I = []
    for I, parts in sorted(by_I.items()):
        mI = sum(parts.values(), Fraction(0))
        h = -math.fsum(float(v / mI) * math.log2(v / mI) for v in parts.values())
        if h >= L * float(tbar) / 2 - 1e-12:
            good_I.append(I)
    nu_good = sum((sum(by_I[I].values(), Fraction(0)) for I in good_I), Fraction(0))
    G_J = []
    per_I = {}
    for I in good_I:
        mI = sum(by_I[I].values(), Fraction(0))
        kept = [Jk for Jk, v in sorted(by_I[I].items()) if not frac_ge_pow2(v / mI, -L * tbar / 4)]
        G_J.extend(kept)
        per_I[I] = sum((by_I[I][Jk] for Jk in kept), Fraction(0)) / mI
    nu_G = sum((v for i, v in w.items() if (i >> (fine_level - lJ)) in set(G_J)), Fraction(0))
    bound = float(tau * tau) / (150 * n * n)
    cert = BranchingScaleCertificate(
        p=Q0[j], n_frak=n, level_I=lI, level_J=lJ, levels=levels,
        level_rounding=[float(x) - lv for x, lv in zip(exact, levels)],
        j_star=j, entropy_table=table, entropy_needed=needed,
        G=sorted(G_J), G_level=lJ, nu_G=nu_G, mass_bound=bound,
        ratio_exponent=tau / (20 * n), max_ratio=0.0,
        ok_mass=float(nu_G) >= bound, ok_ratio=False, ok_proof_ratio=False,
        frostman_C=C_best, eta=float(eta), eta_limit=eta_limit,
    )
    ver = verify_branching_certificate(fine, cert, L)
    cert.max_ratio = ver["max_ratio"]
    cert.ok_ratio = ver["ok_ratio"]
    cert.ok_proof_ratio = ver["max_ratio"] <= (4 / float(tbar)) * 2.0 ** (-L * float(tbar) / 4) + 1e-15
    cert.checks = {
        "good_I_mass": float(nu_good) >= float(tbar) / 2,
        "per_I_mass": all(v >= tbar / 4 for v in per_I.values()),
        "mass_vs_proof": float(nu_G) >= float(tbar) ** 2 / 8,
    }
    return cert


def verify_branching_certificate(nu: ArcMeasure, cert: BranchingScaleCertificate, L: int) -> dict:
    """Recheck ``nu(J cap G) <= delta^e nu(I cap G)`` for every pair ``J`` inside ``I`` from ``G`` alone."""
    lI, lJ = cert.level_I, cert.level_J
    fine = nu if nu.level >= lJ else nu.refine(lJ)
    Gset = set(cert.G)
    s = fine.level - lJ
    inG: dict[int, Fraction] = {}
    for i, v in fine.weights.items():
        Jk = i >> s
        if Jk in Gset:
            inG[Jk] = inG.get(Jk, Fraction(0)) + v
    byI: dict[int, Fraction] = {}
    for Jk, v in inG.items():
        byI[Jk >> (lJ - lI)] = byI.get(Jk >> (lJ - lI), Fraction(0)) + v
    ok, worst = True, 0.0
    expo = -L * cert.ratio_exponent
    for I in range(2**lI):
        mI = byI.get(I, Fraction(0))
        if mI == 0:
            continue
        for Jk in range(I << (lJ - lI), (I + 1) << (lJ - lI)):
            r = inG.get(Jk, Fraction(0)) / mI
            worst = max(worst, float(r))
            if not frac_le_pow2(r, expo):
                ok = False
    return {"ok_ratio": ok, "max_ratio": worst, "mass": sum(inG.values(), Fraction(0))}


# --- delta-measures ---------------------------------------------------------


class DeltaMeasure:
    """Probability weights on ``delta * Z cap [0, span)``, stored as integer numerators."""

    def __init__(self, level: int, weights, span: int = 1):
        if level < 0:
            raise ValueError("negative level")
        self.level, self.span = level, span
        n = span * 2**level
        w = {}
        for k, v in dict(weights).items():
            k, v = int(k), as_fraction(v)
            if v < 0:
                raise ValueError("negative weight")
            if not 0 <= k < n:
                raise ValueError(f"atom {k} outside the lattice of size {n}")
            if v:
                w[k] = v
        if sum(w.values(), Fraction(0)) != 1:
            raise ValueError("a delta-measure must have mass 1")
        self.weights = dict(sorted(w.items()))

    @property
    def delta(self) -> Fraction:
        return level_scale(self.level)

    @property
    def mass(self) -> Fraction:
        return sum(self.weights.values(), Fraction(0))

    def __eq__(self, other):
        if not isinstance(other, DeltaMeasure):
            return NotImplemented
        return (self.level, self.weights) == (other.level, other.weights)

    def __repr__(self):
        return f"DeltaMeasure(level={self.level}, atoms={len(self.weights)}, span={self.span})"

    @classmethod
    def uniform(cls, level: int, atoms) -> "DeltaMeasure":
        atoms = sorted(set(int(a) for a in atoms))
        return cls(level, {a: Fraction(1, len(atoms)) for a in atoms})

    def restrict(self, atoms) -> dict:
        keep = set(atoms)
        return {k: v for k, v in self.weights.items() if k in keep}

    def as_integers(self) -> tuple[np.ndarray, int, int]:
        """``(numerators, denominator, offset)`` over the occupied index range."""
        den = math.lcm(*(v.denominator for v in self.weights.values()))
        lo, hi = min(self.weights), max(self.weights)
        arr = np.zeros(hi - lo + 1, dtype=object)
        for k, v in self.weights.items():
            arr[k - lo] = v.numerator * (den // v.denominator)
        return arr, den, lo


def l2_norm_sq(eta) -> Fraction:
    w = eta.weights if isinstance(eta, DeltaMeasure) else eta
    return sum((v * v for v in w.values()), Fraction(0))


def l2_norm(eta) -> float:
    return math.sqrt(l2_norm_sq(eta))


def convolve(eta1: DeltaMeasure, eta2: DeltaMeasure) -> DeltaMeasure:
    """Exact convolution; the result lives on the same lattice over ``[0, span1 + span2)``."""
    if eta1.level != eta2.level:
        raise ValueError(f"scale mismatch: 2^-{eta1.level} vs 2^-{eta2.level}")
    a, da, oa = eta1.as_integers()
    b, db, ob = eta2.as_integers()
    if max(a.max(), 1) * max(b.max(), 1) * min(len(a), len(b)) < 2**62:
        c = np.convolve(a.astype(np.int64), b.astype(np.int64))
    else:
        c = np.convolve(a, b)
    den = da * db
    out = {oa + ob + k: Fraction(int(v), den) for k, v in enumerate(c) if v}
    return DeltaMeasure(eta1.level, out, eta1.span + eta2.span)


def convolve_reference(eta1: DeltaMeasure, eta2: DeltaMeasure) -> dict:
    """Pairwise-sum convolution used as an independent check."""
    out: dict[int, Fraction] = {}
    for i, u in eta1.weights.items():
        for j, v in eta2.weights.items():
            out[i + j] = out.get(i + j, Fraction(0)) + u * v
    return out


@dataclass(frozen=True)
class InverseGapReport:
    ratio: float
    kappa: Fraction
    kappa_min: float
    holds: bool


def inverse_hypothesis_gap(eta1: DeltaMeasure, eta2: DeltaMeasure, kappa) -> InverseGapReport:
    """Does ``||eta1 * eta2||_2 >= delta^kappa ||eta1||_2`` hold?  Also the least ``kappa`` that works."""
    kappa = as_fraction(kappa)
    conv = convolve(eta1, eta2)
    r2 = l2_norm_sq(conv) / l2_norm_sq(eta1)
    L = eta1.level
    holds = frac_ge_pow2(r2, -2 * kappa * L)
    kmin = max(0.0, -0.5 * math.log2(r2) / L) if L else 0.0
    return InverseGapReport(math.sqrt(r2), kappa, kmin, holds)


@dataclass(frozen=True)
class InverseStructureReport:
    A_uniform: bool
    B_uniform: bool
    R1: tuple
    R2: tuple
    S: tuple
    inclusion: bool
    structure_bound: bool
    A_norm: bool
    B_mass: bool

    @property
    def ok(self) -> bool:
        return all((self.A_uniform, self.B_uniform, self.inclusion, self.structure_bound, self.A_norm, self.B_mass))


def inverse_structure_check(eta1: DeltaMeasure, eta2: DeltaMeasure, A, B, ladder: ScaleLadder, rho) -> InverseStructureReport:
    """Verify the output format of the inverse theorem for candidate sets ``A``, ``B``.

    Checks uniformity of both sets, ``{R2 > 1} subset S = {R1 >= 2^((1-rho) m)}``,
    the size bound ``m |S| >= log2 ||eta2||^-2 + rho log2 delta`` and the two
    largeness conditions ``||eta1|_A|| >= delta^rho ||eta1||``, ``eta2(B) >= delta^rho``.
    """
    rho = as_fraction(rho)
    if eta1.level != ladder.m * ladder.N or eta2.level != eta1.level:
        raise ValueError("measures must live at the ladder's finest scale")
    ra, rb = branching_numbers(A, ladder), branching_numbers(B, ladder)
    m, L = ladder.m, eta1.level
    S = tuple(j for j, r in enumerate(ra.R) if frac_ge_pow2(Fraction(r), (1 - rho) * m)) if ra.is_uniform else ()
    incl = ra.is_uniform and rb.is_uniform and all(j in S for j, r in enumerate(rb.R) if r > 1)
    # m|S| >= -log2 ||eta2||^2 - rho L  <=>  2^(m|S| + rho L) * ||eta2||^2 >= 1
    struct = frac_ge_pow2(l2_norm_sq(eta2), -(m * len(S) + rho * L))
    a_norm = frac_ge_pow2(l2_norm_sq(eta1.restrict(A)) / l2_norm_sq(eta1), -2 * rho * L)
    b_mass = frac_ge_pow2(sum(eta2.restrict(B).values(), Fraction(0)), -rho * L)
    return InverseStructureReport(ra.is_uniform, rb.is_uniform, ra.R, rb.R, S, incl, struct, a_norm, b_mass)


def uniform_norm_check(A1_size: int, delta, s, sigma, zeta) -> tuple[bool, float, float]:
    """Check ``|A1|^(-1/2) <= (delta^(1/2))^((s - sigma - 2 zeta)/2)`` exactly; returns ``(holds, lhs, rhs)``."""
    L = scale_level(delta)
    e = (as_fraction(s) - as_fraction(sigma) - 2 * as_fraction(zeta)) / 2
    # |A1|^-1/2 <= 2^(-L e / 2)  <=>  |A1| >= 2^(L e)
    holds = frac_ge_pow2(Fraction(A1_size), L * e)
    return holds, A1_size**-0.5, 2.0 ** (-L * float(e) / 2)


@dataclass(frozen=True)
class ProductBound:
    product: int
    S: tuple
    lower: float
    chain_ok: bool


def product_lower_bound(R, m: int, rho, size: int | None = None) -> ProductBound:
    """``size >= prod R_n >= 2^((1-rho) m |S|) * prod_{n not in S} R_n`` with ``S = {R_n >= 2^((1-rho) m)}``."""
    rho = as_fraction(rho)
    R = [int(r) for r in R]
    S = tuple(n for n, r in enumerate(R) if frac_ge_pow2(Fraction(r), (1 - rho) * m))
    prod = math.prod(R)
    rest = math.prod(r for n, r in enumerate(R) if n not in S)
    lower = 2.0 ** (float((1 - rho) * m) * len(S)) * rest
    ok = prod >= lower * (1 - 1e-12) and (size is None or size >= prod)
    return ProductBound(prod, S, lower, ok)


# --- projection branching witnesses -----------------------------------------


def _exceeds(count: int, thr: Pow2) -> bool:
    p, q = thr.exp.numerator, thr.exp.denominator
    if count <= 0:
        return False
    return count**q * 2 ** max(-p, 0) > 2 ** max(p, 0)


@dataclass
class BranchingWitnessReport:
    eps: Fraction
    bad_counts: dict
    G: list
    witnesses: dict
    best_counts: list
    bound_exponent: Fraction
    required: Fraction
    count_ok: bool
    in_regime: bool
    regime_note: str
    scales: list
    entropy_good: list


def branching_lower_bound_witness(K: GridSet, theta: Direction, ladder: ScaleLadder, sigma, eps=None, s=None, C=None) -> BranchingWitnessReport:
    """Levels ``j`` with a cube ``Q`` whose projection has ``>= Delta^(sigma - s + 100 eps)`` child intervals.

    The multiplicity hypothesis uses scales ``[10 Delta^(j+1), 10 Delta^j]`` with the
    lower scale rounded up to ``16 Delta^(j+1)``.  ``eps`` defaults to the measured
    largest bad-scale density.  The cardinality ``|G| >= (1 - 10 eps) N`` is
    asserted (``count_ok``) but only binding when ``in_regime``.
    """
    sigma = as_fraction(sigma)
    m, N = ladder.m, ladder.N
    Kd = K.coarsen(ladder.level(N))
    if s is None:
        n = len(Kd)
        e = Fraction(n.bit_length() - 1) if n & (n - 1) == 0 else Fraction(math.log2(n)).limit_denominator(1 << 10)
        while not frac_ge_pow2(Fraction(n), e):
            e -= Fraction(1, 1 << 10)
        s = e / (m * N)
    s = as_fraction(s)
    thr = Pow2(m * sigma)
    pts = [Kd.center(c) for c in Kd.cells]
    bad = {c: 0 for c in Kd.cells}
    scales = []
    for j in range(N):
        q = ScalePairQuery.rounded(10 * ladder.scale(j + 1), 10 * ladder.scale(j))
        scales.append((q.lo, q.hi))
        for c, v in zip(Kd.cells, multiplicity_field(Kd, theta, q, pts)):
            if _exceeds(v, thr):
                bad[c] += 1
    worst = max(bad.values(), default=0)
    measured = Fraction(worst, N)
    if eps is None:
        eps = measured
    eps = as_fraction(eps)
    if measured > eps:
        x = next(Kd.center(c) for c in Kd.cells if Fraction(bad[c], N) > eps)
        raise HypothesisError(f"point {x} has {worst} bad scales > eps*N = {eps * N}", x)
    gs = good_scales(Kd, ladder, s, eps * eps / 2, C=C)
    bexp = m * (s - sigma - 100 * eps)
    G, wit, best = [], {}, []
    for j in range(N):
        lvl = ladder.level(j)
        groups: dict = {}
        for c in Kd.cells:
            sh = Kd.level - lvl
            groups.setdefault((c[0] >> sh, c[1] >> sh), []).append(c)
        top, arg = -1, None
        for Q, cells in sorted(groups.items()):
            n = project_cover(Kd.with_cells(cells), theta, ladder.scale(j + 1))
            if n > top:
                top, arg = n, Q
        best.append(top)
        if frac_ge_pow2(Fraction(top), bexp):
            G.append(j)
            wit[j] = arg
    required = (1 - 10 * eps) * N
    Cr = float(gs.branching_constant) * 2.0 ** (-float(s) * m) if C is None else float(C)
    Cr = max(Cr, 1.0)
    need = math.inf if eps == 0 else max(2 * Cr / float(eps) ** 2, Cr / float(eps))
    in_regime = m >= need
    note = f"log2(1/Delta) = {m} {'>=' if in_regime else '<'} max(2C/eps^2, C/eps) = {need:.4g} (C = {Cr:.4g}, eps = {eps})"
    return BranchingWitnessReport(eps, bad, G, wit, best, bexp, required, len(G) >= required, in_regime, note, scales, gs.good)
