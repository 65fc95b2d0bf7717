import itertools
import math

import numpy as np
import pytest

from tokenqueue.applications import build_matching, build_mmk_hetero, redundancy_classes
from tokenqueue.errors import DomainError, OrderAssumptionViolated, UnsupportedG
from tokenqueue.model import QState
from tokenqueue.performance import (DedicatedIndicator, DisjointIndicator, RedundancyCOSUniform, check_g_normalization,
                                    g_for, little_point, lst_S, lst_S_dedicated, lst_W, lst_W_direct, lst_W_overall,
                                    mean_N_class, mean_S_class, mean_W_class, moments, pgf_M, pgf_M_joint, pgf_N,
                                    pgf_N_joint, prob_wait, theta)
from tokenqueue.product_form import StationaryMeasure
from tokenqueue.transitions import oracle_solve

ALL = ["mmk_hetero", "msccc", "redundancy_cos", "redundancy_coc", "matching"]


def tuples(K):
    for i in range(K + 1):
        yield from itertools.permutations(range(K), i)


def test_theta(models):
    spec = models["msccc"]
    lam = spec.class_rates
    assert theta(spec, 0, 0b011) == pytest.approx(lam[0] / (lam[0] + lam[1]))
    assert theta(spec, 2, 0b011) == 0.0
    assert theta(models["mmk_hetero"], 0, 0b111) == 1.0
    for m in range(1, 8):
        s = sum(theta(spec, c, m) for c in range(3))
        assert s == pytest.approx(1.0)


@pytest.mark.parametrize("name", ALL)
def test_pgfs_at_one_and_zero(models, measures, name):
    m = measures[name]
    C = models[name].n_classes
    assert pgf_N_joint(m, [1.0] * C) == pytest.approx(1.0, abs=1e-13)
    assert pgf_N(m, 1.0) == pytest.approx(1.0, abs=1e-13)
    assert pgf_M(m, 1.0) == pytest.approx(1.0, abs=1e-13)
    assert pgf_M(m, 0.0) == pytest.approx(m.pi0, rel=1e-13)
    law = m.population_law(0)
    assert pgf_M(m, 0.0) == pytest.approx(law[0], rel=1e-13)


@pytest.mark.parametrize("name", ALL)
def test_pgf_monotone_convex_and_lst_monotone(models, measures, name):
    m = measures[name]
    zs = np.linspace(0, 1, 21)
    v = np.array([pgf_M(m, z) for z in zs])
    assert np.all(np.diff(v) >= -1e-15)
    assert np.all(np.diff(v, 2) >= -1e-12)
    for c in range(models[name].n_classes):
        lam = models[name].classes[c].rate
        ss = np.linspace(0, 2 * lam, 15)
        w = np.array([lst_W(m, c, s) for s in ss])
        assert w[0] == pytest.approx(1.0, abs=1e-13)
        assert np.all(np.diff(w) <= 1e-15)


@pytest.mark.parametrize("name", ALL)
def test_substitution_identity(models, measures, name):
    m = measures[name]
    spec = models[name]
    for c in range(spec.n_classes):
        for s in (0.1, 0.3, spec.classes[c].rate):
            a = lst_W(m, c, s)
            b = lst_W_direct(m, c, s)
            z = pgf_N_joint(m, little_point(spec, c, s))
            assert a == pytest.approx(z, abs=1e-12)
            assert b == pytest.approx(z, abs=1e-12)


def test_mmk_conditional_laws(measures):
    # given that an arrival waits, the wait is exponential(mu - lambda) and N is geometric(lambda/mu)
    m = measures["mmk_hetero"]
    lam, mu = 4.0, 6.0
    P = prob_wait(m, 0)
    for s in (0.1, 0.5, 1.0, 3.0, 5.0):
        assert lst_W(m, 0, s) == pytest.approx(1 - P + P * (mu - lam) / (mu - lam + s), abs=1e-12)
    r = lam / mu
    for z in np.linspace(0, 1, 11):
        assert pgf_N(m, z) == pytest.approx(1 - P + P * (1 - r) / (1 - z * r), abs=1e-12)
    assert mean_W_class(m, 0) == pytest.approx(P / (mu - lam), rel=1e-12)


def test_mmk_wait_probability_is_all_busy_probability(measures):
    m = measures["mmk_hetero"]
    busy = math.fsum(m(QState(t, (0,) * 3)) / (1 - 4.0 / 6.0) for t in itertools.permutations(range(3)))
    assert prob_wait(m, 0) == pytest.approx(busy, rel=1e-12)
    # for a single server the all-busy probability is the load
    mm1 = StationaryMeasure(build_mmk_hetero([1.0], 0.5))
    assert prob_wait(mm1, 0) == pytest.approx(0.5, rel=1e-14)


def test_mm1_mean_queue(mm1):
    m = StationaryMeasure(mm1)
    rho = 0.5
    rep = moments(m)
    assert rep.mean_N == pytest.approx(rho ** 2 / (1 - rho), rel=1e-12)
    assert rep.mean_M == pytest.approx(rho / (1 - rho), rel=1e-12)


def test_wait_transform_product_display(models, measures):
    # E[exp(-s W_c)] = pi0 sum prod lambda_{T_j}/(k - lambda_U + s 1{c in U})
    for name in ("mmk_hetero", "msccc", "redundancy_cos", "redundancy_coc"):
        spec, m = models[name], measures[name]
        for c in range(spec.n_classes):
            for s in (0.25, 1.0, 4.0):
                total = 0.0
                for tup in tuples(spec.n_tokens):
                    w, mask = 1.0, 0
                    for t in tup:
                        lt = spec.lambda_t(mask, t)
                        mask |= 1 << t
                        inside = spec.class_masks[c] & ~mask == 0
                        w *= lt / (spec.k_total(mask) - spec.lambda_u(mask) + s * inside)
                    total += w
                assert lst_W(m, c, s) == pytest.approx(m.pi0 * total, rel=1e-12)


def test_msccc_joint_present_display(models, measures):
    spec, m = models["msccc"], measures["msccc"]
    lam = spec.class_rates
    for z in ([0.3, 0.6, 0.9], [0.0, 1.0, 0.5], [0.95, 0.2, 0.7]):
        total = 0.0
        for tup in tuples(3):
            w, mask, acc = 1.0, 0, 0.0
            for t in tup:
                mask |= 1 << t
                acc += lam[t] * z[t]
                w *= lam[t] * z[t] / (spec.k_total(mask) - acc)
            total += w
        assert pgf_M_joint(m, z, DedicatedIndicator()) == pytest.approx(m.pi0 * total, rel=1e-12)


def test_msccc_sojourn_display(models, measures):
    spec, m = models["msccc"], measures["msccc"]
    lam = spec.class_rates
    k, mu = 2, 1.0
    for c in range(3):
        for s in (0.2, 0.5, 1.0):
            total = 0.0
            for tup in tuples(3):
                w, acc, seen = 1.0, 0.0, False
                for j, t in enumerate(tup, start=1):
                    acc += lam[t]
                    seen |= t == c
                    w *= (lam[t] - s * (t == c)) / (min(j, k) * mu - acc + s * seen)
                total += w
            want = m.pi0 * total
            assert lst_S(m, c, s) == pytest.approx(want, rel=1e-12)
            assert lst_S_dedicated(m, c, s) == pytest.approx(want, rel=1e-12)


def test_coc_displays(models, measures):
    spec, m = models["redundancy_coc"], measures["redundancy_coc"]
    K, d, lam, mu = 3, 2, 1.5, 1.0
    subsets = redundancy_classes(K, d)
    C = len(subsets)

    def F(tup):
        return len(set().union(*(subsets[t] for t in tup))) if tup else 0

    for z in (0.2, 0.7, 0.95):
        total = 0.0
        for tup in tuples(C):
            w = (lam * z) ** len(tup)
            for j in range(1, len(tup) + 1):
                w /= mu * C * F(tup[:j]) - j * lam * z
            total += w
        assert pgf_M(m, z) == pytest.approx(m.pi0 * total, rel=1e-12)
    for s in (0.1, 0.5, 1.0):
        total = 0.0
        for tup in tuples(C):
            w = (lam - s * C * (0 in tup)) / lam * lam ** len(tup)
            for j in range(1, len(tup) + 1):
                w /= mu * C * F(tup[:j]) - j * lam + s * C * (0 in tup[:j])
            total += w
        assert lst_S(m, 0, s) == pytest.approx(m.pi0 * total, rel=1e-12)


def test_coc_present_pgf_against_oracle(models, measures):
    spec, m = models["redundancy_coc"], measures["redundancy_coc"]
    orc = oracle_solve(spec, 26)  # tail mass ~1e-8 beyond this bound
    z = 0.7
    direct = math.fsum(p * z ** x.population for x, p in orc.probs.items())
    assert pgf_M(m, z) == pytest.approx(direct, abs=1e-8)


@pytest.mark.parametrize("name", ALL)
def test_little_and_derivatives(models, measures, name):
    spec, m = models[name], measures[name]
    rep = moments(m)
    for c, pc in enumerate(rep.per_class):
        assert pc.little_gap < 1e-8
        assert pc.mean_N == pytest.approx(spec.classes[c].rate * pc.mean_W, rel=1e-8)
    if m.mode == "closed":
        for c in range(spec.n_classes):
            assert mean_N_class(m, c, "numeric") == pytest.approx(mean_N_class(m, c, "closed"), rel=1e-6)
            assert mean_W_class(m, c, "numeric") == pytest.approx(mean_W_class(m, c, "closed"), rel=1e-6)
            if c in spec.fifo_classes:
                g = g_for(spec)
                assert mean_S_class(m, c, g, "numeric") == pytest.approx(mean_S_class(m, c, g, "closed"), rel=1e-6)


def test_sojourn_mean_matches_little_for_present(models, measures):
    # E[M^(c)] = lambda_c E[S_c] for classes leaving in arrival order
    for name in ("msccc", "redundancy_coc"):
        spec, m = models[name], measures[name]
        rep = moments(m)
        for c, pc in enumerate(rep.per_class):
            assert pc.mean_M == pytest.approx(spec.classes[c].rate * pc.mean_S, rel=1e-10)


def test_overall_lst_is_mixture(models, measures):
    spec, m = models["msccc"], measures["msccc"]
    s = 0.4
    want = sum(cl.rate / spec.total_rate * lst_W(m, c, s) for c, cl in enumerate(spec.classes))
    assert lst_W_overall(m, s) == pytest.approx(want, rel=1e-14)
    cos = measures["redundancy_cos"]
    assert lst_W_overall(cos, s) == pytest.approx(lst_W(cos, 1, s), rel=1e-12)


@pytest.mark.parametrize("name", ALL)
def test_g_normalization(models, measures, name):
    spec = models[name]
    g = g_for(spec)
    rng = np.random.default_rng(3)
    tups = [tt.tokens for tt in measures[name].tuples]
    picks = [tups[i] for i in rng.integers(0, len(tups), 100)]
    assert check_g_normalization(spec, g, picks) < 1e-14


def test_g_errors(models):
    with pytest.raises(UnsupportedG):
        DisjointIndicator().weights(models["redundancy_cos"], (0,))
    with pytest.raises(UnsupportedG):
        DedicatedIndicator().weights(models["mmk_hetero"], (0,))
    w = RedundancyCOSUniform().weights(models["redundancy_cos"], (0, 1))
    assert sum(w.values()) == pytest.approx(1.0)
    assert len(w) == 4


def test_sojourn_requires_order(measures):
    with pytest.raises(OrderAssumptionViolated):
        lst_S(measures["redundancy_cos"], 0, 0.5)
    with pytest.raises(OrderAssumptionViolated):
        lst_S(measures["mmk_hetero"], 0, 0.5)


def test_truncated_domain(measures):
    m = measures["matching"]
    assert m.mode == "truncated"
    lst_W(m, 1, 1.6)
    with pytest.raises(DomainError):
        lst_W(m, 1, 1.7)
    with pytest.raises(DomainError):
        pgf_N(m, 1.2)
    # closed mode continues analytically past z = -1
    assert 0 < lst_W(measures["msccc"], 0, 5.0) < 1


def test_transforms_inexact_for_population_dependent_speed():
    # single class matched at rate A(n) = 1 + n/10; exact values from a tagged-customer chain
    spec = build_matching([0.8], [[0]], [1 + n / 10 for n in range(1, 21)])
    m = StationaryMeasure(spec)
    exact = {0.5: (0.6928774688731923, 0.4867572361181216), 1.0: (0.5760299633283716, 0.3088734254735095)}
    for s, (w, sj) in exact.items():
        assert lst_W(m, 0, s) < w - 5e-3
        assert lst_S(m, 0, s) < sj - 5e-3
    assert any("transforms are not" in n for n in moments(m).notes)
    # Little's law for the means is unaffected
    assert moments(m).per_class[0].little_gap < 1e-8
