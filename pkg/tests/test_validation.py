import pytest
from hypothesis import given, settings, strategies as st

from tokenqueue.applications import build_mmk_hetero, reference_models
from tokenqueue.assignment import PriorityRule, TableRule, UniformRule
from tokenqueue.errors import NotStable, ValidationFailed
from tokenqueue.model import CustomerClass, Eta, ModelSpec, PrefixRates, SetFunctionRates
from tokenqueue.product_form import StationaryMeasure
from tokenqueue.validation import (check_assignment_condition, check_oi_condition, check_rate_consistency,
                                   check_stability, validate)


def additive(mu):
    return SetFunctionRates(lambda m: sum(mu[t] for t in range(len(mu)) if m >> t & 1))


@st.composite
def small_specs(draw):
    K = draw(st.integers(1, 4))
    n_cls = draw(st.integers(1, 3))
    classes = []
    used = 0
    for c in range(n_cls):
        m = draw(st.integers(1, (1 << K) - 1))
        used |= m
        classes.append(CustomerClass(draw(st.floats(0.1, 3.0)), frozenset(t for t in range(K) if m >> t & 1)))
    if used != (1 << K) - 1:
        classes.append(CustomerClass(1.0, frozenset(t for t in range(K) if not used >> t & 1)))
    if draw(st.booleans()):
        rule = UniformRule()
    else:
        rule = PriorityRule(draw(st.permutations(range(K))))
    mu = draw(st.lists(st.floats(0.5, 3.0), min_size=K, max_size=K))
    return ModelSpec(K, tuple(classes), rule, additive(mu))


@settings(max_examples=150, deadline=None)
@given(small_specs())
def test_adjacent_check_equivalent_to_full(spec):
    a = check_assignment_condition(spec, "adjacent").passed
    f = check_assignment_condition(spec, "full").passed
    assert a == f


@settings(max_examples=60, deadline=None)
@given(small_specs())
def test_class_conditional_rules_are_rate_consistent(spec):
    assert check_rate_consistency(spec).passed


def test_reference_models_validate():
    for name, spec in reference_models().items():
        rep = validate(spec)
        assert rep.passed, (name, rep.render())
        assert check_stability(spec).stable


def test_priority_rule_violation_has_witness():
    spec = ModelSpec(2, (CustomerClass(1.0, frozenset({0, 1})),), PriorityRule([0, 1]), additive([2.0, 1.0]))
    rep = check_assignment_condition(spec)
    assert not rep.passed
    v = rep.violations[0]
    assert "(t1, t2)" in v.witness and "(t2, t1)" in v.witness
    assert {v.lhs, v.rhs} == {1.0, 0.0}
    with pytest.raises(ValidationFailed) as err:
        StationaryMeasure(spec)
    assert "t1, t2" in str(err.value)


def test_table_rule_roundtrip_of_uniform():
    spec = build_mmk_hetero([1.0, 2.0, 3.0], 4.0)
    tab = ModelSpec(3, spec.classes, TableRule.from_spec(spec), spec.rates)
    assert validate(tab).passed
    for m in range(8):
        for t in range(3):
            if not m >> t & 1:
                assert tab.lambda_t(m, t) == pytest.approx(spec.lambda_t(m, t), rel=1e-15)


def test_prefix_rates_order_dependent_total_rejected():
    # s along (0,1) totals 3, along (1,0) totals 4
    table = {(0,): 1.0, (1,): 2.0, (0, 1): 2.0, (1, 0): 2.0}
    spec = ModelSpec(2, (CustomerClass(1.0, frozenset({0, 1})),), UniformRule(), PrefixRates(table))
    rep = check_oi_condition(spec)
    assert not rep.passed
    assert "order" in rep.violations[0].detail


def test_prefix_rates_negative_rejected():
    table = {(0,): 3.0, (1,): 1.0, (0, 1): -1.0, (1, 0): 1.0}
    spec = ModelSpec(2, (CustomerClass(1.0, frozenset({0, 1})),), UniformRule(), PrefixRates(table))
    assert any("negative" in v.detail for v in check_oi_condition(spec).violations)


def test_nonmonotone_set_function_rejected():
    k = SetFunctionRates({0b01: 2.0, 0b10: 2.0, 0b11: 1.0})
    spec = ModelSpec(2, (CustomerClass(0.5, frozenset({0, 1})),), UniformRule(), k)
    assert not check_oi_condition(spec).passed


@pytest.mark.parametrize("lam,status", [(5.99, "stable"), (6.0, "indeterminate"), (6.01, "unstable")])
def test_stability_sweep(lam, status):
    v = check_stability(build_mmk_hetero([1.0, 2.0, 3.0], lam))
    assert v.status == status
    assert v.witness == (0, 1, 2)


def test_stability_uses_eta_limit():
    spec = build_mmk_hetero([1.0], 1.5)
    assert check_stability(spec).status == "unstable"
    fast = ModelSpec(1, spec.classes, spec.assignment, spec.rates, Eta([1.0, 1.0], tail=2.0))
    assert check_stability(fast).stable
    with pytest.raises(NotStable):
        StationaryMeasure(spec)


def test_large_spec_is_sampled():
    K = 12
    spec = build_mmk_hetero([1.0] * K, 2.0)
    rep = check_assignment_condition(spec)
    assert rep.sampled and rep.passed
