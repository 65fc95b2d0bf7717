import math

import pytest

from tokenqueue.errors import ConfigurationError, UnreachableState
from tokenqueue.model import (CustomerClass, Eta, ModelSpec, QState, SetFunctionRates, compositions, enumerate_states,
                              mask_of, parse_subset_key, subset_key, token_tuples, tokens_of)
from tokenqueue.applications import build_mmk_hetero, build_msccc
from tokenqueue.assignment import UniformRule


def test_subset_keys_roundtrip():
    for m in range(64):
        assert parse_subset_key(subset_key(m)) == m
    assert subset_key(0) == ""
    assert subset_key(mask_of([3, 0])) == "0+3"
    assert tokens_of(0b1011) == (0, 1, 3)


def test_qstate_basics():
    x = QState.of(1, 2, 0, 0)
    assert x.population == 4
    assert x.inactive == 2
    assert x.length == 2
    assert x.mask == 0b11
    assert QState.from_key(x.key()) == x
    assert str(QState((), ())) == "(0)"


def test_eta_tail_and_floor():
    e = Eta([2.0, 1.0, 3.0], tail=1.5)
    assert [e(j) for j in (1, 2, 3, 4, 99)] == [2.0, 1.0, 3.0, 1.5, 1.5]
    assert e.floor_beyond(0) == 1.0
    assert e.floor_beyond(2) == 1.5
    assert not e.is_constant
    assert Eta.constant(2.0).is_constant
    with pytest.raises(ConfigurationError):
        Eta([1.0, 0.0])


def test_token_tuple_counts():
    # ordered selections of K tokens: sum_i K!/(K-i)!
    K = 4
    expected = sum(math.perm(K, i) for i in range(K + 1))
    assert len(list(token_tuples(K))) == expected


def test_compositions():
    # sums up to the total, forced zeros respected
    assert len(list(compositions(2, 2, [True, True]))) == 6
    assert list(compositions(2, 2, [False, True])) == [(0, 0), (0, 1), (0, 2)]


def test_state_count_two_servers():
    # (0); (1,0),(2,0); (1,0,2,0),(2,0,1,0); nobody waits while a server is idle
    spec = build_mmk_hetero([1.0, 2.0], 1.0)
    states = enumerate_states(spec, 2)
    assert len(states) == 5
    assert QState.of(0, 1) not in states


def test_waiting_needs_every_compatible_token_taken():
    spec = build_msccc(2, [0.5, 0.4, 0.3], 1.0)
    spec.check_state(QState.of(0, 3))
    mmk = build_mmk_hetero([1.0, 2.0], 1.0)
    with pytest.raises(UnreachableState):
        mmk.check_state(QState.of(0, 1))


def test_spec_rejects_bad_input():
    k = SetFunctionRates(lambda m: float(bin(m).count("1")))
    with pytest.raises(ConfigurationError):
        ModelSpec(2, (CustomerClass(1.0, frozenset({0})),), UniformRule(), k)  # token 1 unused
    with pytest.raises(ConfigurationError):
        ModelSpec(1, (CustomerClass(-1.0, frozenset({0})),), UniformRule(), k)


def test_lambda_u_and_claim_rates_mmk():
    spec = build_mmk_hetero([1.0, 2.0, 3.0], 4.0)
    assert spec.lambda_u(0b111) == 4.0
    assert spec.lambda_u(0b011) == 0.0
    # uniform among idle servers
    assert spec.lambda_t(0, 0) == pytest.approx(4.0 / 3)
    assert spec.lambda_t(0b001, 2) == pytest.approx(2.0)
    assert spec.k_total(0b101) == 4.0
