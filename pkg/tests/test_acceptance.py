"""End-to-end acceptance checks; each test records one PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance criteria"
section of the terminal summary, or run this file as a script.
"""

import dataclasses
import math
import random
import time
from fractions import Fraction

import numpy as np
import pytest
from conftest import record_criterion

from fraclab.branching import (
    DeltaMeasure,
    branching_lower_bound_witness,
    branching_numbers,
    branching_scale_finder,
    convolve,
    convolve_reference,
    interval_decomposition,
    l2_norm_sq,
    uniformize,
)
from fraclab.dyadic import GridSet, ScaleLadder, level_scale
from fraclab.entropy import (
    conditional_entropy,
    entropy,
    kl_conditional,
    kl_divergence,
    partial_sum_bound,
)
from fraclab.generators import CORPUS_NAMES, corpus_system, directions_from, generate_arc_measure, generate_planar
from fraclab.lab import ExperimentConfig, random_union_of_intervals, run_theorem_A_probe
from fraclab.measure import Ball, GridMeasure, check_ahlfors, compose_balls, renormalize
from fraclab.multiplicity import ScalePairQuery, meets, monotonicity_inclusions, multiplicity_at, rescale_point
from fraclab.projection import Direction, greedy_min_cover

SEED = 20240611


# --- 1. exact identities -------------------------------------------------------


def test_criterion_1_rescaling_and_chain_rule():
    rng = random.Random(SEED + 1)
    corpus = {n: generate_planar(corpus_system(n, 6)) for n in CORPUS_NAMES}
    samples, failures = 0, []
    t0 = time.perf_counter()
    while samples < 1000:
        name = rng.choice(CORPUS_NAMES)
        K, mu = corpus[name]
        a = rng.randint(-1, 3)  # r0 = 2^-a, from 2 down to 1/8
        r0 = Fraction(2) ** -a
        x = (Fraction(rng.randint(-64, 127), 128), Fraction(rng.randint(-64, 127), 128))
        theta = Direction.from_slope(Fraction(rng.randint(-8, 8), 4))
        q = ScalePairQuery(Fraction(1, 2 ** rng.randint(2, 6)), Fraction(1, 2 ** rng.randint(0, 2)))
        # z0 on the lower-scale grid, so T maps delta-cells onto (delta/r0)-cells
        k = int(1 / q.lo)
        z0 = (Fraction(rng.randint(-k, k), k), Fraction(rng.randint(-k, k), k))
        M = rng.randint(1, 6)
        T = K.transform(z0, r0)
        qT = ScalePairQuery(q.lo / r0, q.hi / r0)
        before = meets(multiplicity_at(K, theta, x, q), M)
        after = meets(multiplicity_at(T, theta, rescale_point(x, z0, r0), qT), M)
        # chain rule for renormalised measures, on the same sample
        s = rng.choice([Fraction(1, 2), Fraction(1)])
        B = Ball(z0, r0)
        Bp = Ball((Fraction(rng.randint(-8, 8), 8), Fraction(rng.randint(-8, 8), 8)), Fraction(1, 2 ** rng.randint(0, 2)))
        chain = renormalize(renormalize(mu, B, s), Bp, s) == renormalize(mu, compose_balls(B, Bp), s)
        if before != after or not chain:
            failures.append((name, z0, r0, x, before, after, chain))
        samples += 1
    dt = time.perf_counter() - t0
    ok = not failures and dt < 60
    record_criterion(1, ok, f"{samples} samples, {len(failures)} failures, {dt:.1f}s (limit 60s)")
    assert ok, failures[:3]


# --- 2. monotonicity inclusions ------------------------------------------------


def test_criterion_2_inclusions():
    dirs = [th for th, _ in directions_from(generate_arc_measure("uniform", 4), Fraction(1, 16))]
    assert len(dirs) == 16
    pairs = [(Fraction(1, 256), Fraction(1, 16)), (Fraction(1, 256), Fraction(1, 4)), (Fraction(1, 64), Fraction(1, 4))]
    checked, failures = 0, []
    for name in CORPUS_NAMES:
        K, _ = generate_planar(corpus_system(name, 8))
        for theta in dirs:
            for delta, Delta in pairs:
                for rep in monotonicity_inclusions(K, theta, 2, 4, delta, Delta, 2):
                    checked += 1
                    if not rep.holds:
                        failures.append((name, theta.label(), delta, Delta, rep.name, rep.witness))
    ok = not failures
    record_criterion(2, ok, f"{checked} inclusions over {len(CORPUS_NAMES)} instances x 16 directions x 3 scale pairs, {len(failures)} failures")
    assert ok, failures[:5]


# --- 3. entropy identities -------------------------------------------------------


def _random_measure(rng, level=4, n=40):
    cells = {(rng.randrange(2**level), rng.randrange(2**level)) for _ in range(n)}
    return GridMeasure(level, {c: Fraction(rng.randint(1, 30)) for c in cells}).normalized()


def test_criterion_3_entropy_identities():
    rng = random.Random(SEED + 3)
    worst_chain = worst_kl = 0.0
    gibbs_fail = bound_fail = 0
    t0 = time.perf_counter()
    for _ in range(500):
        nu = _random_measure(rng, n=rng.randint(1, 30))
        mu = GridMeasure(4, {**{c: Fraction(1) for c in nu.weights}, **_random_measure(rng).weights}).normalized()
        a, b = sorted(rng.sample(range(5), 2))
        worst_chain = max(worst_chain, abs(conditional_entropy(nu, b, a) - (entropy(nu, b) - entropy(nu, a))))
        Da, Db = kl_divergence(nu, mu, a), kl_divergence(nu, mu, b)
        worst_kl = max(worst_kl, abs(Db - Da - kl_conditional(nu, mu, b, a)))
        gibbs_fail += Da < 0 or Db < 0
        parts = sorted({(x >> (4 - b), y >> (4 - b)) for x, y in nu.weights})
        coll = rng.sample(parts, rng.randint(1, len(parts)))
        rep = partial_sum_bound(nu, mu, coll, b)
        bound_fail += not rep.holds
    dt = time.perf_counter() - t0
    ok = worst_chain <= 1e-12 and worst_kl <= 1e-12 and not gibbs_fail and not bound_fail and dt < 60
    record_criterion(
        3, ok,
        f"chain rule err {worst_chain:.2e}, KL telescoping err {worst_kl:.2e} (tol 1e-12); "
        f"Gibbs failures {gibbs_fail}, partial-sum failures {bound_fail} on 500 sub-collections; {dt:.1f}s",
    )
    assert ok


# --- 4. interval decomposition contract -------------------------------------------


def _measure_in(E, lo, hi):
    """Independent oracle: clip each interval of E to [lo, hi) and add (overlaps merged first)."""
    pts = sorted(E)
    merged = []
    for a, b in pts:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return sum((max(Fraction(0), min(b, hi) - max(a, lo)) for a, b in merged), Fraction(0))


def test_criterion_4_interval_decomposition():
    rng = random.Random(SEED + 4)
    combos = [(e, C, g) for e in (Fraction(1, 16), Fraction(1, 64)) for C in (2, 4) for g in (Fraction(1, 4), Fraction(1, 8))]
    violations = []
    checked = 0
    for k in range(200):
        eps, C, gamma = combos[k % len(combos)]
        E = random_union_of_intervals(rng, eps)
        assert _measure_in(E, 0, 1) <= eps
        res = interval_decomposition(E, C, gamma, eps)
        Gm = sum((level_scale(lv) for lv, _ in res.G), Fraction(0))
        if Gm < 1 - Fraction(1, C):
            violations.append((k, "measure", Gm))
        g = gamma.denominator.bit_length() - 1
        for lv, ix in res.G:
            for d in range(g + 1):
                for t in range(2**d):
                    h = level_scale(lv + d)
                    lo = ((ix << d) + t) * h
                    checked += 1
                    if not _measure_in(E, lo, lo + h) < 8 * C * eps * h:
                        violations.append((k, "density", (lv, ix), (lv + d, t)))
        if not res.ok:
            violations.append((k, "self-check", res.violations[:1]))
    ok = not violations
    record_criterion(4, ok, f"200 fuzzed sets, {checked} dyadic sub-intervals checked, {len(violations)} violations")
    assert ok, violations[:5]


# --- 5. branching scale certificate ------------------------------------------------


def _ratio_oracle(nu, cert, L):
    """Recompute nu(J cap G) <= delta^(tau/(20n)) nu(I cap G) from the raw weights."""
    fine = nu.refine(cert.levels[0]) if nu.level < cert.levels[0] else nu
    G = set(cert.G)
    mJ, mI = {}, {}
    for i, v in fine.weights.items():
        J = i >> (fine.level - cert.level_J)
        if J in G:
            mJ[J] = mJ.get(J, 0) + v
            I = i >> (fine.level - cert.level_I)
            mI[I] = mI.get(I, 0) + v
    e = cert.ratio_exponent * L  # bound is 2^-e
    bad = 0
    for J, v in mJ.items():
        r = v / mI[J >> (cert.level_J - cert.level_I)]
        # r <= 2^-e  <=>  r^q * 2^p <= 1 with e = p/q
        p, q = e.numerator, e.denominator
        if r.numerator**q * 2**p > r.denominator**q:
            bad += 1
    return bad, sum(mJ.values(), Fraction(0))


def test_criterion_5_branching_scales():
    lines, failures = [], []
    for kind in ("uniform", "cantor"):
        for L in (8, 12):
            for tau in (Fraction(1, 2), Fraction(1)):
                nu = generate_arc_measure(kind, L if kind == "uniform" else 4)
                cert = branching_scale_finder(nu, level_scale(L), 2, tau)
                bound = tau * tau / (150 * cert.n_frak**2)
                bad, nuG = _ratio_oracle(nu, cert, L)
                ok = nuG == cert.nu_G and nuG >= bound and bad == 0 and cert.ok
                lines.append(f"{kind} 2^-{L} tau={tau}: nu(G)={float(nuG):.3g}>={float(bound):.3g} ratio {cert.max_ratio:.3g}")
                if not ok:
                    failures.append((kind, L, tau, nuG, bound, bad))
    ok = not failures
    record_criterion(5, ok, f"8 cases, {len(failures)} failures; " + "; ".join(lines))
    assert ok, failures


# --- 6. greedy versus exhaustive --------------------------------------------------


def _exhaustive(mu, slope, w, m):
    """Minimum number of tubes over every subset of support cells with mass >= m."""
    cells = list(mu.weights)
    den = math.lcm(*(v.denominator for v in mu.weights.values()))
    wts = np.array([int(mu.weights[c] * den) for c in cells], dtype=np.int64)
    h = mu.side
    tube = [math.floor((c[0] * h + slope * c[1] * h) / w) for c in cells]
    index = {t: i for i, t in enumerate(sorted(set(tube)))}
    bits = np.array([1 << index[t] for t in tube], dtype=np.int64)
    n = len(cells)
    mass = np.zeros(1 << n, dtype=np.int64)
    mask = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        mass[1 << i : 1 << (i + 1)] = mass[: 1 << i] + wts[i]
        mask[1 << i : 1 << (i + 1)] = mask[: 1 << i] | bits[i]
    ok = mass * m.denominator >= m.numerator * den
    pop = np.array([bin(int(x)).count("1") for x in range(1 << len(index))])
    return int(pop[mask[ok]].min())


def test_criterion_6_greedy_oracle():
    rng = random.Random(SEED + 6)
    measures = []
    for name in CORPUS_NAMES:
        for lv in (2, 3):
            mu = generate_planar(corpus_system(name, lv if name == "segment" else 2 * (lv // 2)))[1]
            if len(mu.weights) <= 14:
                measures.append(mu)
    for _ in range(24):
        lv = rng.choice([2, 3])
        k = rng.randint(1, 14)
        cells = rng.sample([(i, j) for i in range(2**lv) for j in range(2**lv)], k)
        measures.append(GridMeasure(lv, {c: Fraction(rng.randint(1, 9)) for c in cells}).normalized())
    slopes = [Fraction(k, 8) for k in range(-8, 9)]
    checked, failures = 0, []
    for mu in measures:
        total = mu.mantissa_mass()
        for slope in slopes:
            theta = Direction.from_slope(slope)
            for w in (mu.side, 2 * mu.side):
                for frac in (Fraction(1, 5), Fraction(1, 2), Fraction(4, 5)):
                    m = frac * total
                    g = greedy_min_cover(mu, theta, w, m)[0]
                    e = _exhaustive(mu, slope, w, m)
                    checked += 1
                    if g != e:
                        failures.append((mu, slope, w, frac, g, e))
    ok = not failures
    record_criterion(6, ok, f"{len(measures)} measures (<= 14 cells) x 17 slopes x 2 widths x 3 masses = {checked} comparisons, {len(failures)} mismatches")
    assert ok, failures[:3]


# --- 7. regularity after renormalising ---------------------------------------------


def test_criterion_7_renormalised_regularity():
    rng = random.Random(SEED + 7)
    failures, lines = [], []
    for name in CORPUS_NAMES:
        sys_ = corpus_system(name, 6)
        K, mu = generate_planar(sys_)
        s = sys_.dimension
        C = check_ahlfors(mu, s).C_best  # the certified constant for this instance
        assert check_ahlfors(mu, s, C).verdict
        for _ in range(50):
            a = rng.randint(0, 4)
            step = rng.choice([4, 8, 16, 64])
            z0 = (Fraction(rng.randint(-step, step), step), Fraction(rng.randint(-step, step), step))
            muB = renormalize(mu, Ball(z0, level_scale(a)), s)
            rep = check_ahlfors(muB, s, C)
            if not rep.verdict:
                failures.append((name, z0, a, rep.C_best, C))
        lines.append(f"{name} s={s} C={C:.4g}")
    ok = not failures
    record_criterion(7, ok, f"4 instances x 50 balls, {len(failures)} failures ({'; '.join(lines)})")
    assert ok, failures[:3]


# --- 8. projection branching witness -------------------------------------------------


def test_criterion_8_branching_witness():
    K, _ = generate_planar(corpus_system("cantor_x_cantor", 8))
    ladder = ScaleLadder(2, 4)
    rep = branching_lower_bound_witness(K, Direction.from_slope(0), ladder, Fraction(1, 2))
    count = f"|G| = {len(rep.G)} >= (1 - 10 eps) N = {float(rep.required):g} with measured eps = {rep.eps}: {rep.count_ok}"
    if rep.in_regime:
        record_criterion(8, rep.count_ok, f"{count}; regime holds ({rep.regime_note})")
        assert rep.count_ok
    else:
        # outside the regime the bound is not asserted by the statement: report only
        record_criterion(8, True, f"report-only, regime condition fails: {rep.regime_note}; {count}")


# --- 9. iota trend probe ---------------------------------------------------------------


def test_criterion_9_iota_trend():
    cfg = ExperimentConfig.load("configs/default.toml")
    cfg = dataclasses.replace(cfg, sigma=("s/2",), dual_path=True, N_range=(2, 6), m=2)
    t0 = time.perf_counter()
    rows = run_theorem_A_probe(cfg)
    dt = time.perf_counter() - t0
    trend = [r for r in rows if r.quantity == "iota_non_increasing"]
    dual = [r for r in rows if r.quantity == "iota_dual_path_equal"]
    bad = [r.instance for r in trend if r.value is not True] + [
        f"{r.instance}@N={r.params['N']}" for r in dual if r.value is not True
    ]
    series = {}
    for r in rows:
        if r.quantity == "iota":
            series.setdefault(r.instance, []).append(f"{float(r.value):.3g}")
    ok = not bad and len(dual) == 5 * len(cfg.corpus) and dt < 600
    desc = "; ".join(f"{k}: {' '.join(v)}" for k, v in series.items())
    record_criterion(9, ok, f"{len(trend)} series non-increasing, {len(dual)} dual-path checks equal, {dt:.0f}s (limit 600s); {desc}")
    assert ok, bad


# --- 10. delta-measure algebra -------------------------------------------------------------


def test_criterion_10_delta_measures():
    rng = random.Random(SEED + 10)
    mass_fail = norm_fail = route_fail = unif_fail = 0

    def rand_dm():
        k = rng.randint(1, 40)
        atoms = rng.sample(range(1024), k)
        w = [rng.randint(1, 100) for _ in atoms]
        t = sum(w)
        return DeltaMeasure(10, {a: Fraction(v, t) for a, v in zip(atoms, w)})

    for _ in range(500):
        a, b = rand_dm(), rand_dm()
        c = convolve(a, b)
        mass_fail += c.mass != 1
        norm_fail += l2_norm_sq(c) > min(l2_norm_sq(a), l2_norm_sq(b))
        route_fail += c.weights != convolve_reference(a, b)
    ladder = ScaleLadder(2, 5)
    for _ in range(500):
        pts = rng.sample(range(1024), rng.randint(1, 300))
        unif_fail += not branching_numbers(uniformize(pts, ladder).uniform.points, ladder).is_uniform
    ok = not (mass_fail or norm_fail or route_fail or unif_fail)
    record_criterion(
        10, ok,
        f"500 pairs at 2^-10: mass!=1 {mass_fail}, norm bound {norm_fail}, route mismatch {route_fail}; "
        f"500 uniformize runs, non-uniform outputs {unif_fail}",
    )
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
