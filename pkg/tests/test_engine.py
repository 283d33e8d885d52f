import math

import numpy as np
import pytest

from config import ATOM, STREAMS
from modules.engine import init, successor_distribution
from modules.netmodel import CapExceededError, ParameterDomainError, QState, RangeError
from modules.rng import RngStream


def _sim(spec, params, x0=ATOM, seed=3, **kw):
    return init(spec, params, QState(*x0), seed, STREAMS["simulate"], **kw)


def test_initial_state_is_closed(spec, params) -> None:
    assert _sim(spec, params, (1, 0, 2, 0)).q == QState(0, 1, 2, 0)
    with pytest.raises(ParameterDomainError):
        _sim(spec, params, (0, -1, 0, 0))


def test_same_seed_same_trajectory(spec, params) -> None:
    a = _sim(spec, params).run_until_time(50.0)
    b = _sim(spec, params).run_until_time(50.0)
    assert a.times == b.times and a.states == b.states
    c = _sim(spec, params, seed=4).run_until_time(50.0)
    assert a.times != c.times


def test_debug_run_is_skip_free_and_stable(spec, params) -> None:
    sim = _sim(spec, params, debug=True)
    previous = sim.norm
    for _ in range(20000):
        record = sim.next_event()
        assert abs(record.state_after.norm - previous) == 1
        assert record.state_after.is_stable()
        previous = record.state_after.norm
    assert sim.events == 20000


def test_priority_policy_keeps_buffer3_empty(spec, params) -> None:
    sim = _sim(spec, params, policy="priority", debug=True)
    traj = sim.run_until_time(200.0)
    assert all(q[2] == 0 for q in traj.states)


def test_trajectory_lookup(spec, params) -> None:
    traj = _sim(spec, params).run_until_time(20.0)
    assert traj.events == len(traj.times) > 0
    assert tuple(traj.state_at([0.0])[0]) == ATOM
    assert tuple(traj.state_at([traj.times[0]])[0]) == traj.states[0]
    busy = traj.busy_at([traj.t_end])[0]
    assert busy[0] == pytest.approx(traj.busy_end[0])
    assert busy[1] == pytest.approx(traj.busy_end[1])
    with pytest.raises(RangeError):
        traj.state_at([traj.t_end + 1.0])
    assert [r.state_after for r in traj.records()][-1] == QState(*traj.states[-1])


def test_thinned_trajectory_keeps_grid(spec, params) -> None:
    grid = np.linspace(0.0, 30.0, 7)
    traj = _sim(spec, params).run_until_time(30.0, grid=grid, keep_events=False)
    assert traj.thinned and traj.times == []
    assert tuple(traj.state_at(grid[:1])[0]) == ATOM
    with pytest.raises(RangeError):
        traj.state_at([1.234])
    with pytest.raises(RangeError):
        list(traj.records())


def test_event_cap(spec, params) -> None:
    sim = _sim(spec, params, event_cap=10)
    with pytest.raises(CapExceededError) as info:
        sim.run_until_time(1e9)
    assert info.value.cap == 10
    assert info.value.partial.events == 10


def test_horizon_before_clock_is_rejected(spec, params) -> None:
    sim = _sim(spec, params)
    sim.run_until_time(5.0)
    with pytest.raises(ParameterDomainError):
        sim.run_until_time(1.0)


def test_run_until_hit(spec, params) -> None:
    sim = _sim(spec, params, (0, 0, 0, 5))
    t, q = sim.run_until_hit(lambda s: s.q4 == 0)
    assert t > 0 and q.q4 == 0
    t0, q0 = sim.run_until_hit(lambda s: s.q4 == 0)
    assert (t0, q0) == (t, q)
    t1, _ = sim.run_until_hit(lambda s: True, strict=True)
    assert t1 > t


def test_regeneration_cycles_return_to_atom(spec, params) -> None:
    sim = _sim(spec, params)
    cycles = sim.regen_cycles(n_cycles=5)
    assert len(cycles) == 5
    assert sim.q == QState(*ATOM)
    for cycle in cycles:
        assert cycle.duration > 0 and cycle.events >= 2
        assert sum(cycle.occupation.values()) == pytest.approx(cycle.duration)
        assert cycle.sup_norm >= 2 or cycle.visited_zero


def test_successor_distribution_sums_to_one(spec, params) -> None:
    for state in [(0, 0, 0, 1), (2, 0, 0, 3), (0, 3, 1, 0), (0, 0, 0, 0), (0, 2, 0, 2)]:
        law = successor_distribution(QState(*state), spec, params)
        assert sum(p for p, _, _ in law) == pytest.approx(1.0)
        for _, _, y in law:
            assert y.is_stable()
            assert abs(y.norm - sum(state)) == 1


def test_successor_distribution_hold_branch(spec, params) -> None:
    law = successor_distribution(QState(0, 0, 0, 1), spec, params)
    arrivals1 = {y: p for p, kind, y in law if kind == "Arr1"}
    rate = 2.0 + params.mu
    assert arrivals1[QState(1, 0, 0, 1)] == pytest.approx(
        2 ** -params.hold_exponent / rate
    )
    assert QState(0, 1, 0, 1) in arrivals1


def test_first_event_follows_competing_clocks(spec, params) -> None:
    # from x* the active clocks are Arr1, Arr3 and Svc4, one uniform each
    sim = _sim(spec, params, seed=11)
    ref = RngStream(11, STREAMS["simulate"], 0)
    clocks = [-math.log1p(-ref.uniform()), -math.log1p(-ref.uniform()), -math.log1p(-ref.uniform()) / params.mu]
    first = int(np.argmin(clocks))
    record = sim.next_event()
    assert record.t == pytest.approx(clocks[first], rel=1e-12)
    assert record.kind == ("Arr1", "Arr3", "Svc4")[first]
    # only an Arr1 lands in the randomized region (q4 > 0, q2 = 0)
    assert sim.rng.draws == 3 + (record.kind == "Arr1")


def test_event_count_matches_clock_rates(spec, params) -> None:
    horizon = 2000.0
    traj = _sim(spec, params, seed=21).run_until_time(horizon, keep_events=False)
    busy = traj.busy_end[0] + traj.busy_end[1]
    expected = 2.0 * traj.t_end + params.mu * busy
    assert traj.events == pytest.approx(expected, rel=0.05)
