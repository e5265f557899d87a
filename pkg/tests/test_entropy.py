import math
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fraclab.dyadic import GridSet, ScaleLadder
from fraclab.entropy import (
    PartitionLadder,
    conditional_entropy,
    entropy,
    entropy_profile,
    frac_ge_pow2,
    frac_le_pow2,
    good_cubes,
    good_scales,
    kl_conditional,
    kl_divergence,
    partial_sum_bound,
    partition_pigeonhole,
)
from fraclab.generators import corpus_system, generate_arc_measure, generate_planar
from fraclab.measure import GridMeasure
from fraclab.multiplicity import HypothesisError

weights = st.dictionaries(
    st.tuples(st.integers(0, 15), st.integers(0, 15)), st.integers(1, 20), min_size=1, max_size=40
)


def _measure(w):
    return GridMeasure(4, {k: Fraction(v) for k, v in w.items()}).normalized()


def test_entropy_examples():
    assert entropy(GridMeasure.uniform(GridSet.full(1)), 1) == 2.0
    assert entropy(GridMeasure(3, {(5, 5): Fraction(1)}), 3) == 0.0
    assert entropy({"a": Fraction(1, 2), "b": Fraction(1, 4), "c": Fraction(1, 4)}, [["a"], ["b"], ["c"]]) == 1.5
    assert entropy(generate_arc_measure("uniform", 5), 3) == pytest.approx(3.0, abs=1e-15)


def test_entropy_input_errors():
    with pytest.raises(ValueError):
        entropy({"a": Fraction(1, 2)}, [["a"]])
    with pytest.raises(ValueError):
        entropy({"a": Fraction(1)}, [["b"]])
    with pytest.raises(ValueError):
        entropy({"a": Fraction(1)}, [["a"], ["a"]])
    with pytest.raises(ValueError):
        entropy(GridMeasure.uniform(GridSet.full(2)), 3)


def test_kl_examples():
    mu = generate_arc_measure("uniform", 4)
    assert kl_divergence(mu, mu, 4) == 0.0
    nu = generate_arc_measure("single-arc", 4, index=2)
    assert kl_divergence(nu, mu, 4) == pytest.approx(4.0, abs=1e-15)
    with pytest.raises(ValueError):
        kl_divergence(mu, nu, 4)


@given(weights)
def test_chain_rule(w):
    mu = _measure(w)
    prof = entropy_profile(mu, PartitionLadder((0, 1, 2, 4)))
    assert prof.max_identity_error <= 1e-12
    for a, b in zip(prof.entropies, prof.entropies[1:]):
        assert b >= a - 1e-12
    assert 0 <= prof.entropies[-1] <= math.log2(len(mu.weights)) + 1e-12


@given(weights, weights)
def test_kl_telescoping(w1, w2):
    mu = _measure({**w1, **w2})
    nu = _measure(w1)
    D = [kl_divergence(nu, mu, j) for j in (1, 2, 4)]
    assert D[1] == pytest.approx(D[0] + kl_conditional(nu, mu, 2, 1), abs=1e-12)
    assert D[2] == pytest.approx(D[1] + kl_conditional(nu, mu, 4, 2), abs=1e-12)
    assert min(D) >= -1e-12 and D[0] <= D[1] + 1e-12 <= D[2] + 2e-12


@given(weights, weights, st.randoms(use_true_random=False))
def test_partial_sum_bound(w1, w2, rnd):
    mu = _measure({**w1, **w2})
    nu = _measure(w1)
    parts = sorted({(a >> 2, b >> 2) for a, b in w1})
    coll = rnd.sample(parts, rnd.randint(1, len(parts)))
    rep = partial_sum_bound(nu, mu, coll, 2)
    assert rep.holds and rep.partial_sum >= rep.aggregate - 1e-12 >= -1 - 2e-12


def test_pow2_comparisons():
    assert frac_ge_pow2(Fraction(4), Fraction(2)) and not frac_ge_pow2(Fraction(7, 2), Fraction(2))
    assert frac_ge_pow2(Fraction(3, 2), Fraction(1, 2)) and not frac_ge_pow2(Fraction(7, 5), Fraction(1, 2))
    assert frac_le_pow2(Fraction(1, 8), Fraction(-3)) and not frac_le_pow2(Fraction(1, 7), Fraction(-3))
    assert frac_le_pow2(Fraction(0), Fraction(-50)) and not frac_ge_pow2(Fraction(0), Fraction(-50))


def test_good_scales_cantor_product():
    K, _ = generate_planar(corpus_system("cantor_x_cantor", 12))
    rep = good_scales(K, ScaleLadder(2, 6), 1, Fraction(1, 25))
    # four children per parent at every level: each step has entropy exactly 2 = s * m
    assert rep.good == list(range(6)) and rep.ok
    assert len(rep.good) / 6 >= 0.6
    assert rep.branching_constant == 4
    assert not rep.in_regime  # log2(1/Delta) = 2 < C/eps = 25


def test_good_scales_rejects_small_sets():
    K = GridSet(8, [(0, 0)])
    with pytest.raises(HypothesisError):
        good_scales(K, ScaleLadder(2, 4), 1, Fraction(1, 10))


def test_good_scales_flags_a_lumpy_set():
    # the full grid up to level 4, then one child per cell: half the steps have zero entropy
    K = GridSet(8, [(16 * i, 16 * j) for i in range(16) for j in range(16)])
    rep = good_scales(K, ScaleLadder(2, 4), Fraction(1, 2), Fraction(1, 100))
    assert rep.good == [0, 1] and not rep.ok


def test_good_cubes_uniform():
    mu = GridMeasure.uniform(GridSet.full(4))
    rep = good_cubes(mu, Fraction(1, 4), 2, Fraction(1, 10), 4)
    assert len(rep.cubes) == 16 and rep.mass == 1 and rep.ok and rep.C == 1
    with pytest.raises(HypothesisError):
        good_cubes(GridMeasure(4, {(0, 0): Fraction(1)}), Fraction(1, 4), 2, Fraction(1, 10), 4)


def test_good_cubes_excludes_heavy_cube():
    w = {(0, 0): Fraction(1, 2)}
    w.update({(i, j): Fraction(1, 30) for i in range(4) for j in range(4) if i + j in (1, 2, 3, 4) and (i, j) != (0, 0)})
    w = {k: v for k, v in w.items()}
    mu = GridMeasure(2, w).normalized()
    rep = good_cubes(mu, Fraction(1, 4), 1, Fraction(1, 10), 4)
    assert (0, 0) not in rep.cubes


def test_pigeonhole_examples():
    mu = generate_arc_measure("uniform", 3)
    parts = [0, 1, 2, 3]
    everything = {(j, q): range(8) for j in range(4) for q in range(2**j)}
    res = partition_pigeonhole(mu, parts, everything, 1)
    assert res.ok and res.F == list(range(8)) and res.mass == 1
    with pytest.raises(HypothesisError):
        partition_pigeonhole(mu, parts, {}, Fraction(1, 2))


@given(st.integers(0, 2**16 - 1))
def test_pigeonhole_random_hsets(seed):
    rng = random.Random(seed)
    mu = generate_arc_measure("uniform", 4)
    parts = [0, 1, 2, 3, 4]
    H = {}
    for j in range(5):
        for q in range(2**j):
            H[(j, q)] = [a for a in range(16) if a >> (4 - j) == q and rng.random() < 0.8]
    hits = {a: sum(a in H[(j, a >> (4 - j))] for j in range(5)) for a in range(16)}
    d = Fraction(min(hits.values()), 5)
    if d == 0:
        with pytest.raises(HypothesisError):
            partition_pigeonhole(mu, parts, H, Fraction(1, 5))
        return
    res = partition_pigeonhole(mu, parts, H, d)
    assert res.ok, res.checks


def test_profile_matches_ladder_levels():
    _, mu = generate_planar(corpus_system("four_corner", 8))
    prof = entropy_profile(mu, ScaleLadder(2, 4))
    assert prof.levels == (0, 2, 4, 6, 8)
    assert prof.entropies == pytest.approx([0, 2, 4, 6, 8], abs=1e-12)
    assert conditional_entropy(mu, 8, 0) == pytest.approx(8, abs=1e-12)
