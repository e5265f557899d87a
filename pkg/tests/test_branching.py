import math
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fraclab.branching import (
    DeltaMeasure,
    IntervalMeasure,
    UniformSet1D,
    branching_lower_bound_witness,
    branching_numbers,
    branching_scale_finder,
    convolve,
    convolve_reference,
    decomposition_constants,
    interval_decomposition,
    inverse_hypothesis_gap,
    inverse_structure_check,
    l2_norm,
    l2_norm_sq,
    product_lower_bound,
    tau_rationals,
    uniform_norm_check,
    uniformize,
    verify_branching_certificate,
)
from fraclab.dyadic import GridSet, ScaleLadder
from fraclab.generators import ArcMeasure, corpus_system, generate_arc_measure, generate_planar
from fraclab.multiplicity import HypothesisError
from fraclab.projection import Direction

LADDER = ScaleLadder(2, 3)  # 64 lattice points


def _cantor_points(ladder, digits=(0, 3)):
    out = [0]
    for _ in range(ladder.N):
        out = [4 * k + d for k in out for d in digits]
    return out


# --- uniform sets -------------------------------------------------------------


def test_full_lattice_branching():
    rep = branching_numbers(range(64), LADDER)
    assert rep.is_uniform and rep.R == (4, 4, 4) and rep.size == 64


def test_cantor_branching():
    rep = branching_numbers(_cantor_points(LADDER), LADDER)
    assert rep.is_uniform and rep.R == (2, 2, 2)


def test_deleted_point_reports_deepest_level():
    pts = [k for k in range(64) if k != 37]
    rep = branching_numbers(pts, LADDER)
    assert not rep.is_uniform
    assert rep.violation == (2, 9, 3, 4)  # interval [36, 40) at the finest step lost one child


def test_uniform_set_validation():
    U = UniformSet1D.from_points(_cantor_points(LADDER), LADDER)
    assert U.R == (2, 2, 2)
    with pytest.raises(ValueError):
        UniformSet1D(LADDER, tuple(range(5)), (1, 2, 3))
    with pytest.raises(ValueError):
        branching_numbers([64], LADDER)


def test_uniformize_keeps_uniform_input():
    pts = _cantor_points(LADDER)
    res = uniformize(pts, LADDER)
    assert list(res.uniform.points) == pts and res.ratio == 1


def test_uniformize_drops_sparse_tail():
    ladder = ScaleLadder(2, 4)  # 256 lattice points
    res = uniformize(list(range(64)) + [100, 200], ladder)
    assert list(res.uniform.points) == list(range(64))
    assert res.uniform.R == (1, 4, 4, 4)


@given(st.lists(st.integers(0, 255), min_size=1, max_size=120))
def test_uniformize_output_is_uniform(pts):
    ladder = ScaleLadder(2, 4)
    res = uniformize(pts, ladder)
    assert branching_numbers(res.uniform.points, ladder).is_uniform
    assert set(res.uniform.points) <= set(pts)
    assert 0 < res.ratio <= 1


def test_uniformize_loss_is_bounded():
    # each level keeps at least 1/(2 * (m + 1)) of the points: a crude pigeonhole bound
    rng = random.Random(3)
    ladder = ScaleLadder(2, 4)
    for _ in range(50):
        pts = rng.sample(range(256), 50)
        res = uniformize(pts, ladder)
        assert res.ratio >= Fraction(1, 6) ** ladder.N


# --- interval decomposition ---------------------------------------------------


def test_decomposition_constants():
    assert decomposition_constants(2, Fraction(1, 4)) == (8, Fraction(1, 2**21))
    n, rho = decomposition_constants(1, Fraction(1, 2))
    assert (Fraction(1, 2)) ** n <= Fraction(1, 4) < Fraction(1, 2) ** (n - 1)
    assert Fraction(2) ** (n + 1) * rho <= Fraction(1, 4) < Fraction(2) ** (n + 1) * rho * 2


def test_interval_measure():
    E = IntervalMeasure([(Fraction(1, 2), Fraction(3, 4)), (0, Fraction(1, 8)), (Fraction(5, 8), 1)])
    assert E.total == Fraction(1, 8) + Fraction(1, 2)
    assert E.measure(Fraction(1, 16), Fraction(9, 16)) == Fraction(1, 16) + Fraction(1, 16)
    with pytest.raises(ValueError):
        IntervalMeasure([(Fraction(1, 2), 2)])


def test_decomposition_single_short_interval():
    res = interval_decomposition([(0, Fraction(1, 64))], 2, Fraction(1, 4))
    assert res.ok and res.G_measure == Fraction(3, 4)
    assert all(row["T_bound_ok"] for row in res.audit)


def test_decomposition_empty_set():
    res = interval_decomposition([], 2, Fraction(1, 4), eps=Fraction(1, 16))
    assert res.G == [(0, 0)] and res.ok


def test_decomposition_rejects_large_set():
    with pytest.raises(ValueError):
        interval_decomposition([(0, Fraction(1, 2))], 2, Fraction(1, 4), eps=Fraction(1, 4))
    with pytest.raises(ValueError):
        interval_decomposition([], 2, Fraction(1, 3))


@given(st.lists(st.tuples(st.integers(0, 1023), st.integers(1, 8)), max_size=6))
def test_decomposition_postconditions(pieces):
    E = [(Fraction(a, 1024), Fraction(min(a + b, 1024), 1024)) for a, b in pieces]
    eps = max(IntervalMeasure(E).total, Fraction(1, 1024))
    res = interval_decomposition(E, 2, Fraction(1, 4), eps=eps)
    assert res.ok, res.violations
    # good intervals are disjoint dyadic intervals
    spans = sorted((ix * Fraction(1, 2**lv), (ix + 1) * Fraction(1, 2**lv)) for lv, ix in res.G)
    assert all(b <= c for (_, b), (c, _) in zip(spans, spans[1:]))


# --- branching scale finder ---------------------------------------------------


def test_tau_rationals():
    assert tau_rationals(2, 1) == (2, [Fraction(1, 2), Fraction(1, 4), Fraction(1, 8)])
    assert tau_rationals(2, Fraction(1, 2))[0] == 3
    assert tau_rationals(2, 2)[0] == 1
    ns = [tau_rationals(2, Fraction(1, 2**k))[0] for k in range(6)]
    assert all(a < b for a, b in zip(ns, ns[1:]))
    with pytest.raises(ValueError):
        tau_rationals(1, 1)


@pytest.mark.parametrize("kind", ["uniform", "cantor"])
@pytest.mark.parametrize("L,tau", [(8, Fraction(1, 2)), (12, 1)])
def test_scale_finder_certificates(kind, L, tau):
    # the Cantor measure is built at level 4 and spread evenly below it
    nu = generate_arc_measure(kind, 4 if kind == "cantor" else L)
    cert = branching_scale_finder(nu, Fraction(1, 2**L), tau=tau)
    assert cert.ok and cert.ok_proof_ratio
    assert cert.nu_G == 1 and cert.level_J > cert.level_I
    ver = verify_branching_certificate(nu.refine(cert.levels[0]), cert, L)
    assert ver["ok_ratio"] and ver["max_ratio"] == cert.max_ratio


def test_scale_finder_levels_frozen():
    cert = branching_scale_finder(generate_arc_measure("uniform", 8), Fraction(1, 2**8), tau=Fraction(1, 2))
    assert cert.levels == [8, 4, 2, 1]
    assert cert.max_ratio == 0.0625


def test_scale_finder_rejects_point_mass():
    with pytest.raises(HypothesisError):
        branching_scale_finder(generate_arc_measure("single-arc", 8, index=17), Fraction(1, 2**8))


def test_scale_finder_requires_probability():
    with pytest.raises(ValueError):
        branching_scale_finder(ArcMeasure(8, {0: Fraction(1, 2)}), Fraction(1, 256))


# --- delta-measures -----------------------------------------------------------


def test_uniform_l2_norm():
    for k in (1, 4, 16, 64):
        eta = DeltaMeasure.uniform(8, range(k))
        assert l2_norm_sq(eta) == Fraction(1, k)
        assert l2_norm(eta) == pytest.approx(k**-0.5, rel=1e-15)


def test_point_mass_convolution_is_translation():
    eta = DeltaMeasure.uniform(6, [1, 5, 9])
    dirac = DeltaMeasure(6, {3: 1})
    assert convolve(eta, dirac).weights == {4: Fraction(1, 3), 8: Fraction(1, 3), 12: Fraction(1, 3)}
    assert convolve(DeltaMeasure(6, {0: 1}), eta).weights == eta.weights


def test_delta_measure_validation():
    with pytest.raises(ValueError):
        DeltaMeasure(3, {0: Fraction(1, 2)})
    with pytest.raises(ValueError):
        DeltaMeasure(3, {8: 1})
    with pytest.raises(ValueError):
        convolve(DeltaMeasure(3, {0: 1}), DeltaMeasure(4, {0: 1}))


atoms = st.dictionaries(st.integers(0, 1023), st.integers(1, 50), min_size=1, max_size=30)


def _dm(w):
    t = sum(w.values())
    return DeltaMeasure(10, {k: Fraction(v, t) for k, v in w.items()})


@given(atoms, atoms)
def test_convolution_two_routes_and_young(w1, w2):
    a, b = _dm(w1), _dm(w2)
    c = convolve(a, b)
    assert c.weights == convolve_reference(a, b)
    assert c.mass == 1
    # Young: ||a * b||_2 <= ||a||_2 ||b||_1
    assert l2_norm_sq(c) <= l2_norm_sq(a)
    assert l2_norm_sq(c) <= l2_norm_sq(b)


def test_inverse_gap():
    eta = DeltaMeasure.uniform(8, range(16))
    rep = inverse_hypothesis_gap(eta, DeltaMeasure(8, {0: 1}), 0)
    assert rep.holds and rep.ratio == 1.0 and rep.kappa_min == 0.0
    # ratio 1/4 = 2^(-8 kappa) exactly at kappa = 1/4
    rep = inverse_hypothesis_gap(DeltaMeasure(8, {0: 1}), eta, Fraction(1, 4))
    assert rep.holds and rep.ratio == 0.25 and rep.kappa_min == pytest.approx(0.25)
    assert not inverse_hypothesis_gap(DeltaMeasure(8, {0: 1}), eta, Fraction(1, 5)).holds


def test_inverse_structure_on_uniform_example():
    ladder = ScaleLadder(2, 4)
    A = list(range(256))
    B = [64 * i for i in range(4)]  # branches only at the first step
    eta1 = DeltaMeasure.uniform(8, A)
    eta2 = DeltaMeasure.uniform(8, B)
    rep = inverse_structure_check(eta1, eta2, A, B, ladder, Fraction(1, 10))
    assert rep.ok and rep.R2 == (4, 1, 1, 1) and rep.S == (0, 1, 2, 3)
    rep = inverse_structure_check(eta1, eta2, _cantor_points(ladder), B, ladder, Fraction(1, 10))
    assert not rep.inclusion


def test_uniform_norm_and_product_bounds():
    assert uniform_norm_check(16, Fraction(1, 256), 1, 0, 0) == (True, 0.25, 0.25)
    assert not uniform_norm_check(15, Fraction(1, 256), 1, 0, 0)[0]
    pb = product_lower_bound([4, 2, 4, 1], 2, Fraction(1, 4), size=32)
    assert pb.product == 32 and pb.S == (0, 2) and pb.chain_ok
    assert not product_lower_bound([4, 4], 2, 0, size=15).chain_ok


# --- projection branching witness --------------------------------------------


def test_witness_cantor_product():
    K, _ = generate_planar(corpus_system("cantor_x_cantor", 8))
    rep = branching_lower_bound_witness(K, Direction.from_slope(0), ScaleLadder(2, 4), Fraction(1, 2))
    assert rep.eps == 0 and rep.G == [0, 1, 2, 3] and rep.best_counts == [2, 2, 2, 2]
    assert rep.count_ok and not rep.in_regime and "inf" in rep.regime_note


def test_witness_full_square():
    K = GridSet.full(6)
    rep = branching_lower_bound_witness(K, Direction.from_slope(Fraction(1, 2)), ScaleLadder(2, 3), 1)
    assert rep.G == [0, 1, 2] and all(n >= 4 for n in rep.best_counts)


def test_witness_rejects_too_small_eps():
    K, _ = generate_planar(corpus_system("cantor_x_cantor", 8))
    with pytest.raises(HypothesisError):
        branching_lower_bound_witness(K, Direction.from_slope(0), ScaleLadder(2, 4), Fraction(1, 4), eps=0)
    rep = branching_lower_bound_witness(K, Direction.from_slope(0), ScaleLadder(2, 4), Fraction(1, 4))
    assert rep.eps == Fraction(1, 2)
