import math

import numpy as np
import pytest

from modules import experiments
from modules.experiments import (
    CascadeEventSpec,
    SupRatioTracker,
    fluid_prediction,
    full_cycle_holds,
    replication_key,
)
from modules.netmodel import ParameterDomainError, QState

SEED = 12345


def test_replication_key_is_order_sensitive() -> None:
    assert replication_key(1, 2) == replication_key(1, 2)
    assert replication_key(1, 2) != replication_key(2, 1)


def test_params_report() -> None:
    result = experiments.params_report(0.2)
    assert result.estimates["regime"] == "exploratory"
    assert result.network["C"] == [[1, 0, 0, 1], [0, 1, 1, 0]]
    est = result.estimates
    assert est["hold_count_mean_finite"] is False
    assert est["hold_count_mean"] >= 1.0
    assert any("E[X^2] is infinite" in w for w in result.warnings)


def test_params_report_certified_hold_moments() -> None:
    est = experiments.params_report(1e-4).estimates
    assert est["hold_count_mean_finite"] and est["hold_count_second_moment_finite"]
    assert 1.0 <= est["hold_count_mean"] <= est["hold_count_second_moment"]


def test_psi_table_telescopes() -> None:
    result = experiments.psi_table(0.1, 300)
    assert result.estimates["max_rel_error"] <= 1e-10
    header, rows = result.tables["psi"]
    assert len(rows) == 300 and header[0] == "k"
    with pytest.raises(ParameterDomainError):
        experiments.psi_table(0.1, 0)


def test_simulate_writes_one_row_per_event() -> None:
    result = experiments.simulate(0.2, QState(0, 0, 0, 1), 30.0, SEED, debug=True)
    _, rows = result.tables["trajectory"]
    assert len(rows) == result.estimates["events"] + 1
    assert rows[0][5] == "init"
    assert 0 < result.estimates["busy_fraction4"] <= 1


def test_mm1_oracle_is_thread_independent() -> None:
    one = experiments.mm1_emptying_oracle(10, 2.0, 300, SEED, threads=1)
    two = experiments.mm1_emptying_oracle(10, 2.0, 300, SEED, threads=2)
    assert one.estimates == two.estimates
    assert one.estimates["relative_error_mean"] < 0.2
    with pytest.raises(ParameterDomainError):
        experiments.mm1_emptying_oracle(10, 0.9, 10, SEED)


def test_poisson_ld_check() -> None:
    result = experiments.poisson_ld_check(1.0, [5.0, 10.0, 20.0], 0.5, 2000, SEED)
    assert result.estimates["chernoff_rate"] == pytest.approx(1.5 * math.log(1.5) - 0.5)
    assert len(result.tables["ld"][1]) == 3
    assert result.estimates["p_dev_t5"] > result.estimates.get("p_dev_t20", 0.0)


def test_drain_small() -> None:
    result = experiments.drain_experiment(0.2, 50, [0.3, 0.5], 64, SEED)
    assert 0 <= result.estimates["p_accept"] <= result.estimates["p_accept_eps0.5"] <= 1
    assert result.estimates["expected_T4"] == pytest.approx(250.0)
    assert any("second-moment" in w for w in result.warnings)


def test_hold_event_small() -> None:
    result = experiments.hold_event_experiment(0.2, [2, 4], 200, SEED)
    est = result.estimates
    for x4 in (2, 4):
        assert 0 <= est[f"p_hold_policy_x{x4}"] <= 1
        assert 0 < est[f"p_hold_oracle_x{x4}"] <= 1
        assert 0 <= est[f"ks_T4_pvalue_x{x4}"] <= 1
    assert len(result.tables["holds"][1]) == 2


@pytest.mark.slow
def test_hold_event_agrees_with_thinning_oracle() -> None:
    result = experiments.hold_event_experiment(0.2, [5, 10], 4000, 7)
    est = result.estimates
    for x4 in (5, 10):
        assert abs(est[f"z_policy_vs_oracle_x{x4}"]) <= 3.5
        # buffer 4 drains as a plain M/M/1 whatever the policy does upstream
        assert est[f"ks_T4_pvalue_x{x4}"] > 1e-3
        mean_t4 = est[f"mean_T4_policy_x{x4}"]
        assert abs(mean_t4 - x4 / 0.2) <= 4 * result.stderr[f"mean_T4_policy_x{x4}"]


def test_cascade_windows(params) -> None:
    windows = CascadeEventSpec.build(0.05, 10, params)
    assert windows.t4_window == pytest.approx((0.95 * 50, 1.05 * 50))
    assert windows.q4_window == pytest.approx((0.95**4 * 250, 1.05**4 * 250))
    with pytest.raises(ParameterDomainError):
        CascadeEventSpec.build(0.1, 10, params)


def test_full_cycle_condition(params) -> None:
    assert full_cycle_holds(params, 1, 20.0, QState(0, 0, 0, 20))
    assert not full_cycle_holds(params, 1, 10.0, QState(0, 0, 0, 10))
    assert not full_cycle_holds(params, 1, 20.0, QState(0, 1, 0, 20))


def test_cascade_event_nesting() -> None:
    result = experiments.cascade_experiment(0.2, 5, 0.09, 128, SEED, stage="full")
    est = result.estimates
    assert est["p_E4_E1"] <= min(est["p_E4"], est["p_E1"])
    assert est["p_all_windows"] <= est["p_E4_E1"]
    assert est["p_full_cycle"] <= est["p_state_only_cycle"]


def test_sup_ratio_tracker() -> None:
    tracker = SupRatioTracker(3, s_min=1.0, ratio=2.0, points=3)
    tracker.observe(0.5, 3)
    tracker.observe(1.5, 2)
    tracker.observe(3.0, 6)
    assert tracker.sup_ratio() == [(1.0, 3.0), (2.0, 2.0)]


def test_tail_occupation_small() -> None:
    result = experiments.tail_occupation(0.2, 20000, 100, SEED)
    est = result.estimates
    assert est["cycles"] > 0
    assert est["occupation_weight_sum"] == pytest.approx(1.0)
    assert est["ccdf_non_increasing"]
    assert est["moment_p1"] > 0
    assert {"occupation", "ccdf", "tail_overlay", "sup_ratio"} <= set(result.tables)


def test_fluid_small() -> None:
    result = experiments.fluid_experiment(0.2, [10, 20], 4, SEED, horizon=2.0, points=5)
    est = result.estimates
    assert est["initial_norm_error_k10"] == pytest.approx(0.0)
    assert est["median_sup_dev_q4_k20"] >= 0
    prediction = fluid_prediction((0, 0, 0, 1), 1.2, np.array([0.0, 2.5, 10.0]))
    assert prediction[:, 3] == pytest.approx([1.0, 0.5, 0.0])
    assert fluid_prediction((1, 0, 0, 1), 1.2, np.zeros(2)) is None


def test_drift_estimates_lie_in_sandwich() -> None:
    states = [QState(0, 0, 0, 2), QState(0, 0, 0, 4)]
    result = experiments.drift_estimate(0.2, 1, 1.0, states, 20, SEED)
    for tag in ("0_0_0_2", "0_0_0_4"):
        lower, upper = result.estimates[f"sandwich_{tag}"]
        assert lower <= result.estimates[f"V_{tag}"] <= upper
    assert "growth_exponent" in result.estimates
    with pytest.raises(ParameterDomainError):
        experiments.drift_estimate(0.2, 3, 1.0, states, 20, SEED)


def test_empty_server_small() -> None:
    result = experiments.empty_server_experiment(0.2, QState(0, 3, 0, 5), 64, SEED)
    assert result.estimates["T_over_norm"] > 0
    assert 0 <= result.estimates["p_within_bounds"] <= 1


@pytest.mark.slow
def test_multicycle_probabilities_decrease() -> None:
    result = experiments.multicycle_experiment(0.2, 2, 256, SEED)
    est = result.estimates
    assert est["p_E2_state_only"] <= est["p_E1_state_only"]
    assert est["p_E2_windows"] <= est["p_E1_windows"] <= est["p_E1_state_only"]
    assert est["ratio_delta"] == pytest.approx(0.35)
