"""Event-driven simulator of the KSRS network under ψ (or the priority oracle).

Every event redraws the competing exponential clocks by inverse CDF, one
uniform per active clock in the order Arr1 (rate 1), Arr3 (rate 1), Svc2 (μ,
only if q2>0), Svc4 (μ, only if q4>0); the earliest fires. An arrival that
lands in the randomized region draws one further uniform; no other draws
happen. After each event the flush closure runs, so every recorded state is
the right-continuous post-event state.
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from config import ATOM, EVENT_CAP, FLUSH_RING_SIZE, THIN_THRESHOLD
from modules.logs import debug_enabled, get_logger
from modules.netmodel import (
    CapExceededError,
    InvariantViolation,
    NetworkSpec,
    ParameterDomainError,
    QState,
    RangeError,
    require_ksrs,
)
from modules.policy import (
    PolicyParams,
    PsiPolicy,
    apply_action,
    arrival_is_randomized,
    decide_arrival,
    flush_closure,
    make_policy,
    psi_seq,
)
from modules.rng import RngStream
from modules.stats import bin_index

logger = get_logger("engine")

EVENT_KINDS = ("Arr1", "Arr3", "Svc2", "Svc4")
ARR1, ARR3, SVC2, SVC4 = range(4)


@dataclass(frozen=True)
class EventRecord:
    t: float
    kind: str
    state_after: QState
    flushed1: int
    flushed3: int


@dataclass
class CycleStats:
    """One excursion between successive visits to the regeneration atom."""

    start: float
    duration: float
    events: int
    sup_norm: int
    visited_zero: bool
    occupation: Counter = field(default_factory=Counter)  # histogram bin -> time
    norm_integrals: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)  # ∫‖q‖^p dt, p = 1..4


class Trajectory:
    """Event log plus states sampled on a time grid.

    The per-event columns are dropped once a run passes THIN_THRESHOLD events;
    the grid samples and the summary are always kept.
    """

    def __init__(self, t0: float, initial: QState, busy0: tuple[float, float], grid: np.ndarray):
        self.t0 = t0
        self.initial = initial
        self.busy0 = busy0
        self.thinned = False
        self.times: list[float] = []
        self.states: list[tuple[int, int, int, int]] = []
        self.kinds: list[int] = []
        self.flushed: list[tuple[int, int]] = []
        self.busy: list[tuple[float, float]] = []
        self.grid = np.asarray(grid, dtype=float)
        self.grid_states = np.zeros((len(self.grid), 4), dtype=np.int64)
        self.grid_busy = np.zeros((len(self.grid), 2))
        self.events = 0
        self.t_end = t0
        self.busy_end = busy0
        self.max_norm = initial.norm

    def __len__(self) -> int:
        return self.events

    def records(self) -> Iterator[EventRecord]:
        if self.thinned:
            raise RangeError("trajectory was thinned; only grid samples are available")
        for t, q, k, (f1, f3) in zip(self.times, self.states, self.kinds, self.flushed):
            yield EventRecord(t, EVENT_KINDS[k], QState(*q), f1, f3)

    def _lookup(self, times: np.ndarray) -> np.ndarray:
        """Row index per time into [initial] + events (or into the grid when thinned)."""
        times = np.asarray(times, dtype=float)
        if len(times) and (times.max() > self.t_end + 1e-12 or times.min() < self.t0):
            raise RangeError(f"times outside trajectory horizon [{self.t0}, {self.t_end}]")
        if not self.thinned:
            return np.searchsorted(np.asarray(self.times), times, side="right")
        pos = np.searchsorted(self.grid, times, side="left")
        pos = np.minimum(pos, len(self.grid) - 1)
        if not np.allclose(self.grid[pos], times, rtol=0, atol=1e-9):
            raise RangeError("thinned trajectory only answers at its grid times")
        return pos

    def state_at(self, times) -> np.ndarray:
        idx = self._lookup(times)
        if self.thinned:
            return self.grid_states[idx]
        table = np.vstack([np.array(self.initial, dtype=np.int64)[None, :], np.asarray(self.states, dtype=np.int64).reshape(-1, 4)])
        return table[idx]

    def busy_at(self, times) -> np.ndarray:
        """Cumulative busy time (buffer 2, buffer 4), interpolated linearly inside holding intervals."""
        times = np.asarray(times, dtype=float)
        idx = self._lookup(times)
        if self.thinned:
            return self.grid_busy[idx]
        ev_t = np.concatenate([[self.t0], np.asarray(self.times, dtype=float)])
        ev_b = np.vstack([np.array(self.busy0)[None, :], np.asarray(self.busy, dtype=float).reshape(-1, 2)])
        ev_q = np.vstack([np.array(self.initial)[None, :], np.asarray(self.states).reshape(-1, 4)])
        active = np.stack([ev_q[idx, 1] > 0, ev_q[idx, 3] > 0], axis=1)
        return ev_b[idx] + active * (times - ev_t[idx])[:, None]

    def summary(self) -> dict:
        return {
            "events": self.events,
            "t_end": self.t_end,
            "busy2": self.busy_end[0],
            "busy4": self.busy_end[1],
            "max_norm": self.max_norm,
            "thinned": self.thinned,
        }


class SimState:
    """Queue vector, clock, busy times, event counter and random stream of one run."""

    def __init__(
        self,
        spec: NetworkSpec,
        params: PolicyParams,
        x0: QState,
        rng: RngStream,
        policy: str = "psi",
        debug: bool | None = None,
        event_cap: int = EVENT_CAP,
    ):
        require_ksrs(spec)
        if any(v < 0 for v in x0):
            raise ParameterDomainError(f"initial state must be non-negative, got {tuple(x0)}")
        self.spec = spec
        self.params = params
        self.policy: PsiPolicy = make_policy(policy, params)
        self.mu = spec.mu(2)
        self.rng = rng
        self.debug = debug_enabled() if debug is None else debug
        self.event_cap = event_cap
        self.t = 0.0
        self.busy = [0.0, 0.0]
        self.events = 0
        self.flush_epochs1 = 0
        self.flush_epochs3 = 0
        self.last_flushed = (0, 0)
        self.flush_log: deque | None = deque(maxlen=FLUSH_RING_SIZE) if self.debug else None
        q1, q2, q3, q4, f1, f3, _ = self.policy.closure(*x0)
        self._q = (q1, q2, q3, q4)

    @property
    def q(self) -> QState:
        return QState(*self._q)

    @property
    def norm(self) -> int:
        return sum(self._q)

    def _advance(self) -> tuple[int, float]:
        """Apply one event in place. Returns (kind code, holding time before it)."""
        q1, q2, q3, q4 = self._q
        mu = self.mu
        rng = self.rng
        # clocks drawn in the order Arr1, Arr3, Svc2, Svc4; idle servers draw nothing
        dt = -math.log1p(-rng.uniform())
        kind = ARR1
        clock = -math.log1p(-rng.uniform())
        if clock < dt:
            dt, kind = clock, ARR3
        if q2:
            clock = -math.log1p(-rng.uniform()) / mu
            if clock < dt:
                dt, kind = clock, SVC2
        if q4:
            clock = -math.log1p(-rng.uniform()) / mu
            if clock < dt:
                dt, kind = clock, SVC4

        self.t += dt
        if q2:
            self.busy[0] += dt
        if q4:
            self.busy[1] += dt

        f1 = f3 = 0
        policy = self.policy
        if kind == ARR1:
            q1 += 1
            if policy.randomized(1, q1, q2, q3, q4) and rng.uniform() >= policy.psi(q1):
                q2 += q1
                f1 = q1
                q1 = 0
        elif kind == ARR3:
            q3 += 1
            if policy.randomized(3, q1, q2, q3, q4) and rng.uniform() >= policy.psi(q3):
                q4 += q3
                f3 = q3
                q3 = 0
        elif kind == SVC2:
            q2 -= 1
        else:
            q4 -= 1

        before = self._q
        q1, q2, q3, q4, c1, c3, both = policy.closure(q1, q2, q3, q4)
        f1 += c1
        f3 += c3
        self._q = (q1, q2, q3, q4)
        self.events += 1
        self.last_flushed = (f1, f3)
        if f1:
            self.flush_epochs1 += 1
        if f3:
            self.flush_epochs3 += 1

        if self.debug:
            self._check(kind, before, both, f1, f3)
        return kind, dt

    def _check(self, kind: int, before: tuple, both: bool, f1: int, f3: int) -> None:
        after = self._q
        if abs(sum(after) - sum(before)) != 1:
            raise InvariantViolation("skip-free step violated", before, after)
        if self.policy.asserts_stability:
            if not QState(*after).is_stable():
                raise InvariantViolation("stability predicate violated", before, after)
            if both:
                raise InvariantViolation("both flushes enabled at one epoch", before, after)
        if (f1 or f3) and self.flush_log is not None:
            self.flush_log.append((self.t, EVENT_KINDS[kind], f1, f3))

    def next_event(self) -> EventRecord:
        kind, _ = self._advance()
        f1, f3 = self.last_flushed
        return EventRecord(self.t, EVENT_KINDS[kind], self.q, f1, f3)

    def norm_power_sum(self, steps: int, p: int) -> float:
        """Σ ‖X(t)‖^p over the next `steps` embedded steps."""
        total = 0.0
        for _ in range(steps):
            self._advance()
            total += sum(self._q) ** p
        return total

    def _guard_cap(self, start_events: int, partial=None) -> None:
        if self.events - start_events >= self.event_cap:
            raise CapExceededError(
                f"event cap {self.event_cap} reached at t={self.t}", self.event_cap, partial
            )

    def run_until_time(
        self,
        horizon: float,
        grid: np.ndarray | None = None,
        keep_events: bool = True,
    ) -> Trajectory:
        """Simulate until the clock passes `horizon` (the crossing event is kept)."""
        if horizon < self.t:
            raise ParameterDomainError(f"horizon {horizon} is before the clock {self.t}")
        if grid is None:
            grid = np.linspace(self.t, horizon, 1001) if horizon > self.t else np.array([self.t])
        traj = Trajectory(self.t, self.q, (self.busy[0], self.busy[1]), grid)
        traj.thinned = not keep_events
        start = self.events
        gi = 0
        n_grid = len(traj.grid)
        grid_t = traj.grid
        while self.t < horizon:
            self._guard_cap(start, traj)
            t_prev, q_prev, b_prev = self.t, self._q, (self.busy[0], self.busy[1])
            kind, dt = self._advance()
            while gi < n_grid and grid_t[gi] < self.t:
                g = grid_t[gi]
                traj.grid_states[gi] = q_prev
                traj.grid_busy[gi] = (
                    b_prev[0] + (g - t_prev if q_prev[1] else 0.0),
                    b_prev[1] + (g - t_prev if q_prev[3] else 0.0),
                )
                gi += 1
            traj.events += 1
            norm = sum(self._q)
            if norm > traj.max_norm:
                traj.max_norm = norm
            if not traj.thinned:
                traj.times.append(self.t)
                traj.states.append(self._q)
                traj.kinds.append(kind)
                traj.flushed.append(self.last_flushed)
                traj.busy.append((self.busy[0], self.busy[1]))
                if traj.events >= THIN_THRESHOLD:
                    logger.debug("thinning trajectory after %d events", traj.events)
                    traj.thinned = True
                    traj.times, traj.states, traj.kinds, traj.flushed, traj.busy = [], [], [], [], []
        while gi < n_grid:
            traj.grid_states[gi] = self._q
            traj.grid_busy[gi] = self.busy
            gi += 1
        traj.t_end = max(self.t, horizon) if traj.events == 0 else self.t
        traj.busy_end = (self.busy[0], self.busy[1])
        return traj

    def run_until_hit(
        self,
        predicate: Callable[[QState], bool],
        strict: bool = False,
        on_event: Callable[[SimState, int], None] | None = None,
    ) -> tuple[float, QState]:
        """First event epoch whose post-closure state satisfies `predicate`.

        The current state counts unless `strict` is set.
        """
        if not strict and predicate(self.q):
            return self.t, self.q
        start = self.events
        while True:
            self._guard_cap(start, (self.t, self.q))
            kind, _ = self._advance()
            if on_event is not None:
                on_event(self, kind)
            state = QState(*self._q)
            if predicate(state):
                return self.t, state

    def iter_cycles(
        self,
        atom: QState = QState(*ATOM),
        max_events: int | None = None,
        on_event: Callable[[float, int], None] | None = None,
    ) -> Iterator[CycleStats]:
        """Yield completed cycles between successive visits to `atom`.

        Events before the first visit are simulated but not reported. Stops
        when `max_events` events have been simulated by this call.
        """
        atom = tuple(atom)
        limit = self.event_cap if max_events is None else max_events
        start = self.events
        while self._q != atom:
            if self.events - start >= limit:
                return
            self._advance()
            if on_event is not None:
                on_event(self.t, sum(self._q))

        while True:
            cycle_start_t = self.t
            cycle_start_ev = self.events
            occupation: Counter = Counter()
            integrals = [0.0, 0.0, 0.0, 0.0]
            sup_norm = sum(self._q)
            visited_zero = sup_norm == 0
            while True:
                if self.events - start >= limit:
                    return
                if self.events - cycle_start_ev >= self.event_cap:
                    raise CapExceededError(
                        f"cycle exceeded event cap {self.event_cap}", self.event_cap, None
                    )
                n = sum(self._q)
                _, dt = self._advance()
                occupation[bin_index(n)] += dt
                p = dt * n
                integrals[0] += p
                p *= n
                integrals[1] += p
                p *= n
                integrals[2] += p
                integrals[3] += p * n
                n_after = sum(self._q)
                if on_event is not None:
                    on_event(self.t, n_after)
                if n_after > sup_norm:
                    sup_norm = n_after
                if n_after == 0:
                    visited_zero = True
                if self._q == atom:
                    break
            yield CycleStats(
                start=cycle_start_t,
                duration=self.t - cycle_start_t,
                events=self.events - cycle_start_ev,
                sup_norm=sup_norm,
                visited_zero=visited_zero,
                occupation=occupation,
                norm_integrals=tuple(integrals),
            )

    def regen_cycles(self, atom: QState = QState(*ATOM), n_cycles: int = 1) -> list[CycleStats]:
        cycles: list[CycleStats] = []
        try:
            for cycle in self.iter_cycles(atom):
                cycles.append(cycle)
                if len(cycles) >= n_cycles:
                    break
        except CapExceededError as exc:
            exc.partial = cycles
            raise
        return cycles


def init(
    spec: NetworkSpec,
    params: PolicyParams,
    x0: QState,
    seed: int,
    stream_id: int,
    replication: int = 0,
    **kwargs,
) -> SimState:
    """Fresh simulation from flush_closure(x0) at t = 0."""
    return SimState(spec, params, QState(*x0), RngStream(seed, stream_id, replication), **kwargs)


def successor_distribution(
    state: QState, spec: NetworkSpec, params: PolicyParams
) -> list[tuple[float, str, QState]]:
    """Exact one-step law of the embedded chain from a stable state under ψ."""
    require_ksrs(spec)
    state = flush_closure(QState(*state))
    q1, q2, q3, q4 = state
    mu = spec.mu(2)
    rate = 2.0 + (mu if q2 else 0.0) + (mu if q4 else 0.0)
    out: list[tuple[float, str, QState]] = []

    for buffer, kind in ((1, "Arr1"), (3, "Arr3")):
        arrived = QState(q1 + (buffer == 1), q2, q3 + (buffer == 3), q4)
        if arrival_is_randomized(buffer, arrived):
            m = arrived.q1 if buffer == 1 else arrived.q3
            hold = psi_seq(m, params)
            flush = decide_arrival(buffer, arrived, 1.0, params)
            out.append((hold / rate, kind, flush_closure(arrived)))
            out.append(((1 - hold) / rate, kind, flush_closure(apply_action(arrived, flush))))
        else:
            out.append((1 / rate, kind, flush_closure(arrived)))
    if q2:
        out.append((mu / rate, "Svc2", flush_closure(QState(q1, q2 - 1, q3, q4))))
    if q4:
        out.append((mu / rate, "Svc4", flush_closure(QState(q1, q2, q3, q4 - 1))))
    return out
