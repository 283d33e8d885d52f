import itertools
import math

import pytest

from modules.netmodel import InvariantViolation, ParameterDomainError, QState
from modules.policy import (
    PolicyAction,
    PriorityPolicy,
    PsiPolicy,
    arrival_is_randomized,
    big_psi,
    decide_arrival,
    derive_params,
    eta_threshold,
    flush_closure,
    hold_count_moment,
    hold_count_pmf,
    hold_survival,
    log_psi_star,
    make_policy,
    psi_seq,
    psi_star,
    summability_partial,
)


def test_derived_constants_at_delta_02(params) -> None:
    assert params.mu == pytest.approx(1.2)
    assert params.gamma4 == pytest.approx(5.0)
    assert params.gamma24 == pytest.approx(25.0)
    assert params.gamma == pytest.approx(30.0)
    assert params.beta1 == pytest.approx(6.25)
    assert params.beta2 == pytest.approx(100.0)
    assert params.eta == pytest.approx(math.log(6.25) / math.log(100.0))
    assert params.c == params.beta1
    assert params.regime == "exploratory"


def test_certified_gate_boundary() -> None:
    assert derive_params(1e-4).eta_condition_holds
    assert derive_params(1e-4).regime == "certified"
    assert not derive_params(2e-4).eta_condition_holds


def test_second_moment_regime_between() -> None:
    params = derive_params(1e-3)
    assert not params.eta_condition_holds
    assert params.second_moment_holds
    assert params.regime == "second-moment"


@pytest.mark.parametrize("delta", [0.0, -0.1, 0.5, 0.6, 1.5])
def test_delta_domain(delta) -> None:
    with pytest.raises(ParameterDomainError):
        derive_params(delta)


def test_eta_threshold_matches_formula() -> None:
    assert eta_threshold(math.e**12) == pytest.approx(1.0)


def test_psi_star_closed_form_matches_definition(params) -> None:
    s = 7.0
    direct = (big_psi(params.beta1 * s**params.eta) / big_psi(s**params.eta)) ** 0.25
    assert psi_star(s, params) == pytest.approx(direct, rel=1e-12)
    with pytest.raises(ParameterDomainError):
        log_psi_star(0.5, params)


def test_psi_is_ratio_of_consecutive_psi_star(params) -> None:
    for n in (1, 2, 10, 1000):
        expected = math.exp(log_psi_star(n, params) - log_psi_star(n + 1, params))
        assert psi_seq(n, params) == pytest.approx(expected, rel=1e-12)
        assert 0 < psi_seq(n, params) < 1
    with pytest.raises(ParameterDomainError):
        psi_seq(0, params)


def test_hold_survival_telescopes(params) -> None:
    product = 1.0
    for k in range(1, 500):
        product *= psi_seq(k, params)
        assert hold_survival(k, params) == pytest.approx(product, rel=1e-10)
    assert hold_survival(0, params) == 1.0


def test_hold_count_pmf_sums_to_flushed_mass(params) -> None:
    k_max = 2000
    pmf = hold_count_pmf(k_max, params)
    assert (pmf > 0).all()
    assert pmf.sum() == pytest.approx(1 - hold_survival(k_max, params), rel=1e-10)


def test_hold_count_moment_finiteness_flag(params) -> None:
    _, finite = hold_count_moment(1, params, k_max=100)
    assert finite == (params.hold_exponent > 1)
    _, finite = hold_count_moment(1, derive_params(1e-4), k_max=100)
    assert finite


def test_summability_partial_is_increasing(params) -> None:
    partial = summability_partial(params, 50)
    assert len(partial) == 50
    assert (partial[1:] > partial[:-1]).all()


def test_flush_closure_examples() -> None:
    assert flush_closure(QState(1, 0, 0, 0)) == QState(0, 1, 0, 0)
    assert flush_closure(QState(0, 0, 3, 0)) == QState(0, 0, 0, 3)
    assert flush_closure(QState(2, 0, 0, 4)) == QState(2, 0, 0, 4)
    assert flush_closure(QState(1, 0, 1, 0)) == QState(0, 1, 1, 0)
    with pytest.raises(InvariantViolation):
        flush_closure(QState(1, 0, 1, 0), strict=True)


def test_closure_output_is_stable() -> None:
    for q in [(3, 0, 2, 0), (0, 0, 5, 2), (4, 1, 0, 1), (2, 0, 2, 2), (0, 1, 3, 0)]:
        assert flush_closure(QState(*q)).is_stable()


def test_randomized_region() -> None:
    assert arrival_is_randomized(1, QState(1, 0, 0, 2))
    assert not arrival_is_randomized(1, QState(1, 1, 0, 2))
    assert arrival_is_randomized(3, QState(0, 2, 1, 0))
    with pytest.raises(ParameterDomainError):
        arrival_is_randomized(2, QState(0, 1, 0, 0))


def test_decide_arrival_uses_uniform_only_in_randomized_region(params) -> None:
    state = QState(1, 0, 0, 3)
    assert decide_arrival(1, state, 0.0, params) is PolicyAction.HOLD
    assert decide_arrival(1, state, 0.999, params) is PolicyAction.FLUSH_BUFFER1
    with pytest.raises(ParameterDomainError):
        decide_arrival(1, state, None, params)
    assert decide_arrival(1, QState(1, 0, 0, 0), None, params) is PolicyAction.FLUSH_BUFFER1
    assert decide_arrival(3, QState(0, 2, 1, 0), 0.0, params) is PolicyAction.HOLD


def test_integer_policy_agrees_with_closure(params) -> None:
    policy = PsiPolicy(params)
    for q in itertools.product(range(5), repeat=4):
        state = QState(*q)
        q1, q2, q3, q4, f1, f3, both = policy.closure(*q)
        assert QState(q1, q2, q3, q4) == flush_closure(state)
        assert f1 + f3 == q[0] + q[2] - (q1 + q3)
        try:
            flush_closure(state, strict=True)
        except InvariantViolation:
            assert both
        else:
            assert not both
        for buffer, arrived in ((1, q[0]), (3, q[2])):
            if arrived:
                assert policy.randomized(buffer, *q) == arrival_is_randomized(buffer, state)


def test_integer_hold_matches_decide_arrival(params) -> None:
    policy = PsiPolicy(params)
    for q in itertools.product(range(1, 5), (0,), range(5), range(1, 5)):
        assert policy.randomized(1, *q)
        p = policy.psi(q[0])
        assert decide_arrival(1, QState(*q), 0.5 * p, params) is PolicyAction.HOLD
        assert decide_arrival(1, QState(*q), 0.5 * (1.0 + p), params) is PolicyAction.FLUSH_BUFFER1
    assert policy.psi(7) == pytest.approx(psi_seq(7, params), rel=1e-12)


def test_priority_policy_never_holds_buffer3(params) -> None:
    policy = make_policy("priority", params)
    assert isinstance(policy, PriorityPolicy)
    assert policy.closure(0, 0, 2, 0)[:4] == (0, 0, 0, 2)
    assert policy.closure(3, 0, 0, 1)[:4] == (3, 0, 0, 1)
    assert not policy.randomized(1, 1, 0, 0, 1)
    with pytest.raises(ParameterDomainError):
        make_policy("lifo", params)
