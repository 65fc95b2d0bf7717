import itertools
import math

import pytest

from tokenqueue.applications import (FjEvaluator, OIMeasure, OIQueueSpec, build_from_oi, build_matching,
                                     build_mmk_hetero, build_msccc, build_redundancy_coc, build_redundancy_cos,
                                     coc_as_matching, erlang_c_oi, msccc_oi, oi_stationary, tau)
from tokenqueue.errors import ConfigurationError
from tokenqueue.model import LabeledQState, QState, enumerate_states
from tokenqueue.product_form import StationaryMeasure


def test_fj_counts_union():
    f = FjEvaluator([{0, 1}, {1, 2}, {0, 2}], scale=2.0)
    assert f.count(0b001) == 2
    assert f.count(0b011) == 3
    assert f(0b111) == 6.0


@pytest.mark.parametrize("K,d", [(3, 2), (4, 2), (4, 3), (5, 2)])
def test_cos_claim_formula_matches_uniform_choice(K, d):
    a = build_redundancy_cos(K, d, 1.3, 1.0, rule="formula")
    b = build_redundancy_cos(K, d, 1.3, 1.0, rule="uniform")
    for m in range(1 << K):
        for t in range(K):
            if not m >> t & 1:
                assert a.lambda_t(m, t) == pytest.approx(b.lambda_t(m, t), rel=1e-13)


def test_coc_equals_matching_construction():
    a = StationaryMeasure(build_redundancy_coc(3, 2, 1.5, 1.0))
    b = StationaryMeasure(coc_as_matching(3, 2, 1.5, 1.0))
    for x in enumerate_states(a.spec, 6):
        assert a(x) == pytest.approx(b(x), rel=1e-12, abs=1e-15)


def test_builders_reject_bad_parameters():
    with pytest.raises(ConfigurationError):
        build_mmk_hetero([], 1.0)
    with pytest.raises(ConfigurationError):
        build_msccc(0, [1.0], 1.0)
    with pytest.raises(ConfigurationError):
        build_redundancy_cos(3, 4, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        build_matching([1.0], [[]], 1.0)
    with pytest.raises(ConfigurationError):
        build_matching([1.0], [[0]], lambda n: 1.0)  # a function needs its constant tail point


def test_tau():
    assert tau((0, 1, 0, 2, 1), [1, 1, 1]) == LabeledQState((0, 1, 2), (0, 1, 1))
    assert tau((0, 0, 0), [2]) == LabeledQState((0, 0), (0, 1))
    with pytest.raises(ValueError):
        tau((0,), [0])


def test_oi_measure_against_msccc_sequences():
    oi = msccc_oi(2, [0.5, 0.4, 0.3], 1.0)
    om = OIMeasure(oi)
    tm = StationaryMeasure(build_msccc(2, [0.5, 0.4, 0.3], 1.0))
    assert om.pi0 == pytest.approx(tm.pi0, rel=1e-12)
    agg = {}
    for L in range(0, 6):
        for seq in itertools.product(range(3), repeat=L):
            xl = tau(seq, [1, 1, 1])
            agg[xl] = agg.get(xl, 0.0) + om(seq)
    for xl, p in agg.items():
        assert tm(QState(xl.labels, xl.counts)) == pytest.approx(p, rel=1e-12)


def test_erlang_oi_against_formula():
    K, lam, mu = 3, 2.0, 1.0
    om = OIMeasure(erlang_c_oi(K, lam, mu))
    a = lam / mu
    w = [a ** n / math.factorial(n) if n <= K else a ** n / (math.factorial(K) * K ** (n - K)) for n in range(500)]
    z = math.fsum(w)
    law = om.population_law(20)
    for n in range(21):
        assert law[n] == pytest.approx(w[n] / z, rel=1e-12)
    # the Erlang C probability of waiting
    erlang_c = math.fsum(w[K:]) / z
    assert 1 - math.fsum(law[:K]) == pytest.approx(erlang_c, rel=1e-12)


def test_build_from_oi_caps():
    oi = erlang_c_oi(2, 1.0, 1.0)
    spec = build_from_oi(oi, [2])
    m = StationaryMeasure(spec)
    ref = StationaryMeasure(build_mmk_hetero([1.0, 1.0], 1.0))
    for x in enumerate_states(spec, 5):
        assert m(x) == pytest.approx(ref(x), rel=1e-12)
    # two tokens for a class that keeps gaining rate with a third customer
    with pytest.raises(ConfigurationError):
        build_from_oi(erlang_c_oi(3, 1.0, 1.0), [2])
    assert isinstance(build_from_oi(oi, [math.inf]), OIMeasure)


def test_oi_stationary_cache():
    oi = erlang_c_oi(1, 0.5, 1.0)
    assert oi_stationary(oi, ()) == pytest.approx(0.5)
    assert oi_stationary(oi, (0, 0)) == pytest.approx(0.125)


def test_unstable_oi_diverges():
    from tokenqueue.errors import Divergence

    with pytest.raises(Divergence):
        OIMeasure(OIQueueSpec((2.0,), lambda n: 1.0), max_level=200)
