import math

import pytest

from tokenqueue.applications import build_mmk_hetero, build_redundancy_coc, redundancy_classes
from tokenqueue.errors import NotIndistinguishable
from tokenqueue.model import LabeledQState, QState, enumerate_states
from tokenqueue.product_form import StationaryMeasure, inactive_series, permutation_ratio


def test_mm1_geometric(mm1):
    m = StationaryMeasure(mm1)
    assert m.pi0 == pytest.approx(0.5, rel=1e-14)
    for n in range(1, 12):
        assert m(QState.of(0, n - 1)) == pytest.approx(0.5 * 0.5 ** n, rel=1e-13)


def test_erlang_population_law():
    lam, K = 2.0, 3
    m = StationaryMeasure(build_mmk_hetero([1.0] * K, lam))
    a = lam
    w = [a ** n / math.factorial(n) if n <= K else a ** n / (math.factorial(K) * K ** (n - K)) for n in range(400)]
    z = math.fsum(w)
    law = m.population_law(15)
    for n in range(16):
        assert law[n] == pytest.approx(w[n] / z, rel=1e-12)


def test_msccc_display(models, measures):
    spec, m = models["msccc"], measures["msccc"]
    k, mu = 2, 1.0
    lam = spec.class_rates
    ref0 = m(QState((), ()))
    for x in enumerate_states(spec, 6):
        i = x.length
        w = 1.0
        acc = 0.0
        for j, (t, n) in enumerate(zip(x.tokens, x.counts), start=1):
            acc += lam[t]
            w *= lam[t] * (acc / (min(j, k) * mu)) ** n
        w /= mu ** i * math.factorial(min(i, k)) * k ** max(i - k, 0)
        assert m(x) == pytest.approx(ref0 * w, rel=1e-12)


def test_coc_display(models, measures):
    spec, m = models["redundancy_coc"], measures["redundancy_coc"]
    K, d, lam, mu = 3, 2, 1.5, 1.0
    subsets = redundancy_classes(K, d)
    C = len(subsets)
    ref0 = m(QState((), ()))
    for x in enumerate_states(spec, 6):
        w = 1.0 / math.factorial(x.length)
        cover = set()
        for j, (t, n) in enumerate(zip(x.tokens, x.counts), start=1):
            cover |= subsets[t]
            w *= (j * lam / (mu * C * len(cover))) ** (n + 1)
        assert m(x) == pytest.approx(ref0 * w, rel=1e-12)


def test_closed_and_truncated_normalizers_agree(models):
    for name in ("mmk_hetero", "msccc", "redundancy_cos", "redundancy_coc"):
        a = StationaryMeasure(models[name], mode="closed")
        b = StationaryMeasure(models[name], mode="truncated")
        assert a.normalizer == pytest.approx(b.normalizer, rel=1e-13)
        assert b.normalizer_error < 1e-13 * b.normalizer


def test_series_against_geometric():
    from tokenqueue.model import Eta

    s = inactive_series([0.3, 0.6], 2, Eta.constant(1.0), 1e-15)
    assert s.value == pytest.approx(1 / (0.7 * 0.4), rel=1e-14)
    assert s.remainder < 1e-15


def test_tail_bound_is_certified(models, measures):
    for name in ("mmk_hetero", "msccc", "redundancy_cos", "matching"):
        m = measures[name]
        for B in (3, 8, 12):
            law = m.population_law(B)
            true_tail = 1.0 - math.fsum(law)
            assert m.tail_mass_bound(B) >= true_tail - 1e-15
            assert m.tail_mass_bound(B) <= true_tail * 1.001 + 1e-15


def test_label_aggregation():
    spec = build_mmk_hetero([1.0, 1.0, 2.0], 2.0)
    assert spec.token_labels == (0, 0, 1)
    m = StationaryMeasure(spec)
    for labels, counts in [((0,), (0,)), ((0, 1), (0, 0)), ((0, 0, 1), (0, 0, 3)), ((1, 0, 0), (0, 0, 2))]:
        xl = LabeledQState(labels, counts)
        assert m.aggregate_by_labels(xl, "formula") == pytest.approx(m.aggregate_by_labels(xl, "sum"), rel=1e-13)
    # labels must not merge tokens with different rates
    bad = StationaryMeasure(build_mmk_hetero([1.0, 2.0], 1.0))
    object.__setattr__(bad.spec, "token_labels", (0, 0))
    with pytest.raises(NotIndistinguishable):
        bad.aggregate_by_labels(LabeledQState((0,), (0,)))


def test_permutation_ratio(models, measures):
    spec, m = models["mmk_hetero"], measures["mmk_hetero"]
    a, b = (0, 2, 1), (2, 1, 0)
    xa, xb = QState(a, (0, 0, 2)), QState(b, (0, 0, 2))
    assert m(xa) / m(xb) == pytest.approx(permutation_ratio(spec, a, b), rel=1e-13)


def test_probabilities_sum_to_one_without_truncation_loss(measures):
    m = measures["redundancy_coc"]
    B = 40
    total = math.fsum(m.population_law(B))
    assert total + m.tail_mass_bound(B) == pytest.approx(1.0, abs=1e-12)
