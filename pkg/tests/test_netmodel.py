import math

import pytest

from modules.netmodel import (
    NetworkSpec,
    ParameterDomainError,
    QState,
    ServiceRate,
    UnsupportedTopologyError,
    build_ksrs,
    is_ksrs,
    require_ksrs,
    traffic_intensities,
    validate_network,
)


def test_ksrs_spec_is_valid(spec) -> None:
    assert validate_network(spec) == []
    assert is_ksrs(spec)
    assert spec.exit_buffers() == [2, 4]


def test_traffic_intensities_reduce_to_one_over_mu(spec, params) -> None:
    rho1, rho2 = traffic_intensities(spec)
    assert rho1 == pytest.approx(1 / params.mu)
    assert rho2 == pytest.approx(1 / params.mu)


def test_json_round_trip_keeps_infinite_rates(spec) -> None:
    doc = spec.to_json()
    assert doc["mu"][0] == "inf"
    assert NetworkSpec.from_json(doc) == spec


def test_validate_flags_broken_routing(spec) -> None:
    cyclic = NetworkSpec(
        spec.arrival_rates,
        spec.service_rates,
        spec.constituency,
        ((0, 1, 0, 0), (1, 0, 0, 0), (0, 0, 0, 1), (0, 0, 0, 0)),
    )
    problems = validate_network(cyclic)
    assert any("nilpotent" in p for p in problems)


def test_validate_flags_infinite_exit_rate(spec) -> None:
    rates = (ServiceRate.infinite(),) * 4
    broken = NetworkSpec(spec.arrival_rates, rates, spec.constituency, spec.routing)
    assert any("exit buffer" in p for p in validate_network(broken))


def test_validate_flags_multiply_assigned_class(spec) -> None:
    broken = NetworkSpec(spec.arrival_rates, spec.service_rates, ((1, 1, 0, 1), (0, 1, 1, 0)), spec.routing)
    assert "class multiply assigned" in validate_network(broken)


def test_validate_reports_ragged_matrices_as_violations(spec) -> None:
    ragged_c = NetworkSpec(spec.arrival_rates, spec.service_rates, ((1, 0, 0, 1), (0, 1, 1)), spec.routing)
    assert validate_network(ragged_c) == ["constituency must be servers x classes"]
    ragged_r = NetworkSpec(spec.arrival_rates, spec.service_rates, spec.constituency, ((0, 1, 0, 0), (0, 0), (0, 0, 0, 1), (0, 0, 0, 0)))
    assert "routing must be classes x classes" in validate_network(ragged_r)


def test_other_topologies_are_rejected(spec) -> None:
    asymmetric = NetworkSpec(
        spec.arrival_rates,
        (ServiceRate.infinite(), ServiceRate.finite(1.2), ServiceRate.infinite(), ServiceRate.finite(1.5)),
        spec.constituency,
        spec.routing,
    )
    assert not is_ksrs(asymmetric)
    with pytest.raises(UnsupportedTopologyError):
        require_ksrs(asymmetric)


def test_service_rate_domain() -> None:
    with pytest.raises(ParameterDomainError):
        ServiceRate.finite(0.0)
    with pytest.raises(ParameterDomainError):
        ServiceRate.finite(math.inf)
    assert ServiceRate.infinite().load(1.0) == 0.0


def test_stability_predicate() -> None:
    assert QState(0, 0, 0, 1).is_stable()
    assert QState(2, 0, 0, 3).is_stable()
    assert QState(0, 4, 1, 0).is_stable()
    assert not QState(1, 0, 0, 0).is_stable()
    assert not QState(1, 2, 0, 3).is_stable()
    assert not QState(0, 0, 1, 0).is_stable()


def test_state_parse() -> None:
    assert QState.parse("0, 0,0,7") == QState(0, 0, 0, 7)
    assert QState.parse("1,2,3,4").norm == 10
    for bad in ("1,2,3", "a,b,c,d", "0,0,-1,0"):
        with pytest.raises(ParameterDomainError):
            QState.parse(bad)


def test_build_ksrs_uses_mu(params) -> None:
    spec = build_ksrs(params)
    assert spec.mu(2) == spec.mu(4) == pytest.approx(1.2)
    assert math.isinf(spec.mu(1)) and math.isinf(spec.mu(3))
