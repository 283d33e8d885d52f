"""Experiments over the engine and the independent oracles.

Each public function returns an ExperimentResult. Replications run in fixed
blocks of REPLICATION_BLOCK through a process pool; block results come back
in block order, so every estimate is the same for any worker count.
"""

from __future__ import annotations

import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from tqdm import tqdm

from config import (
    ATOM,
    CONFIDENCE_LEVEL,
    DEFAULT_EMPTY_C2,
    DEFAULT_FLUID_HORIZON,
    DEFAULT_FLUID_POINTS,
    DEFAULT_MM1_EPSILON,
    DEFAULT_SUP_RATIO_POINTS,
    DEFAULT_WINDOW_EPSILON,
    MAX_REL_STDERR,
    MIN_INNER_REPS,
    MIN_REGEN_CYCLES,
    REPLICATION_BLOCK,
    STREAMS,
    SUP_RATIO_GRID_RATIO,
    SUP_RATIO_MIN_TIME,
    TAIL_CHUNK_CYCLES,
)
from modules.artifacts import TRAJECTORY_HEADER, ExperimentResult, trajectory_table
from modules.engine import SimState, Trajectory, init, successor_distribution
from modules.logs import get_logger, progress_enabled
from modules.netmodel import ParameterDomainError, QState, build_ksrs
from modules.oracles import (
    cascade_bound,
    mm1_emptying_time,
    mm1_emptying_variance,
    mm1_thinning_sample,
    poisson_chernoff_rate,
    poisson_counts,
    ratio_delta,
    thinning_weight,
    vp_horizon,
    vp_sandwich,
)
from modules.policy import PolicyParams, derive_params, hold_count_moment, log_psi_star, psi_seq, summability_partial
from modules.rng import RngStream, splitmix64
from modules.stats import (
    MeanAccumulator,
    OccupationHistogram,
    binomial_stderr,
    combined_z,
    lag1_autocorrelation,
    proportion_interval,
    ratio_estimate,
    z_value,
    zero_count_upper_bound,
)

logger = get_logger("experiments")


# Replication plumbing

def replication_key(*parts: int) -> int:
    """Stable 64-bit replication id from several small integers."""
    key = 0
    for part in parts:
        key = splitmix64(key ^ (int(part) & ((1 << 64) - 1)))
    return key


def _blocks(reps: int) -> list[tuple[int, int]]:
    return [(start, min(start + REPLICATION_BLOCK, reps)) for start in range(0, reps, REPLICATION_BLOCK)]


def run_replications(
    worker: Callable[[tuple], list],
    payload: tuple,
    reps: int,
    threads: int = 1,
    label: str = "",
) -> list:
    """worker((payload, start, stop)) for every block, flattened in replication order."""
    tasks = [(payload, start, stop) for start, stop in _blocks(reps)]
    bar = dict(total=len(tasks), desc=label, unit="block", file=sys.stderr, disable=not progress_enabled(), leave=False)
    if threads <= 1 or len(tasks) <= 1:
        chunks = [worker(task) for task in tqdm(tasks, **bar)]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(tqdm(pool.map(worker, tasks), **bar))
    return [item for chunk in chunks for item in chunk]


def _map_tasks(worker: Callable, tasks: list, threads: int, label: str) -> list:
    bar = dict(total=len(tasks), desc=label, file=sys.stderr, disable=not progress_enabled(), leave=False)
    if threads <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tqdm(tasks, **bar)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(tqdm(pool.map(worker, tasks), **bar))


def _new_result(name: str, params: PolicyParams | None, seed: int | None, reps: int, **echo) -> ExperimentResult:
    if params is None:
        return ExperimentResult(name=name, params=dict(echo), seed=seed, replications=reps)
    return ExperimentResult(
        name=name,
        params={**params.to_json(), **echo},
        seed=seed,
        replications=reps,
        regime=params.regime,
        network=build_ksrs(params).to_json(),
    )


def _finish(result: ExperimentResult, started: float) -> ExperimentResult:
    result.runtime = time.perf_counter() - started
    for message in result.warnings:
        logger.warning("%s: %s", result.name, message)
    logger.info("%s finished in %.2fs", result.name, result.runtime)
    return result


def _require_reps(reps: int) -> None:
    if reps < 1:
        raise ParameterDomainError(f"replication count must be positive, got {reps}")


def _proportion(result: ExperimentResult, key: str, successes: int, total: int) -> float:
    p = successes / total if total else math.nan
    result.add(key, p, binomial_stderr(successes, total))
    lo, hi = proportion_interval(successes, total)
    result.add(f"{key}_ci", [lo, hi])
    return p


def _mean(result: ExperimentResult, key: str, values: Sequence[float]) -> MeanAccumulator:
    acc = MeanAccumulator()
    acc.extend(values)
    result.add(key, acc.mean, acc.stderr)
    return acc


# Parameters and ψ table

def params_report(delta: float) -> ExperimentResult:
    started = time.perf_counter()
    params = derive_params(delta)
    result = _new_result("params", params, None, 0, delta=delta)
    result.estimates.update(params.to_json())
    # X = buffer-1 content at its first flush while buffer 4 stays busy
    for r, name in ((1, "hold_count_mean"), (2, "hold_count_second_moment")):
        value, finite = hold_count_moment(r, params)
        result.add(name, value)
        result.add(f"{name}_finite", finite)
        if not finite:
            result.warn(f"E[X^{r}] is infinite; {name} is truncated at k = 1e5")
    return _finish(result, started)


def psi_table(delta: float, k_max: int) -> ExperimentResult:
    """ψ(k), running products and the telescoping check Ψ*(1)/Ψ*(k)."""
    if k_max < 1:
        raise ParameterDomainError(f"k_max must be >= 1, got {k_max}")
    started = time.perf_counter()
    params = derive_params(delta)
    result = _new_result("psi", params, None, 0, k_max=k_max)
    partial = summability_partial(params, k_max)
    base = log_psi_star(1.0, params)
    rows = []
    product = 1.0  # ∏_{i<k} ψ(i)
    worst = 0.0
    for k in range(1, k_max + 1):
        closed = math.exp(base - log_psi_star(float(k), params))
        rel = abs(product - closed) / closed
        worst = max(worst, rel)
        psi_k = psi_seq(k, params)
        rows.append([k, psi_k, product, closed, rel, float(partial[k - 1])])
        product *= psi_k
    result.table("psi", ["k", "psi", "product_before_k", "closed_form", "rel_error", "summability_partial"], rows)
    result.add("max_rel_error", worst)
    result.add("summability_partial_last", float(partial[-1]))
    result.add("eta_condition_holds", params.eta_condition_holds)
    return _finish(result, started)


# Single trajectory

def simulate(
    delta: float,
    x0: QState,
    horizon: float,
    seed: int,
    policy: str = "psi",
    debug: bool | None = None,
) -> ExperimentResult:
    started = time.perf_counter()
    params = derive_params(delta)
    result = _new_result("simulate", params, seed, 1, init=list(x0), horizon=horizon, policy=policy)
    sim = init(build_ksrs(params), params, x0, seed, STREAMS["simulate"], policy=policy, debug=debug)
    traj = sim.run_until_time(horizon)
    summary = traj.summary()
    result.estimates.update(summary)
    result.add("final_state", list(sim.q))
    result.add("flush_epochs1", sim.flush_epochs1)
    result.add("flush_epochs3", sim.flush_epochs3)
    if traj.t_end > traj.t0:
        span = traj.t_end - traj.t0
        result.add("busy_fraction2", (summary["busy2"] - traj.busy0[0]) / span)
        result.add("busy_fraction4", (summary["busy4"] - traj.busy0[1]) / span)
    if traj.thinned:
        result.warn("event log thinned; trajectory.csv holds grid samples only")
    result.table("trajectory", TRAJECTORY_HEADER, trajectory_table(traj))
    return _finish(result, started)


# Fluid scaling

@dataclass
class ScaledTrajectory:
    kappa: float
    grid: np.ndarray
    q_scaled: np.ndarray  # one row of q^κ per grid point
    z_scaled: np.ndarray  # cumulative busy time of buffers 2 and 4, divided by κ
    x: tuple[float, ...]


def fluid_scale(traj: Trajectory, kappa: float, grid) -> ScaledTrajectory:
    """q^κ(t) = Q(κt)/κ and z^κ(t) = Z(κt)/κ on `grid`."""
    if kappa <= 0:
        raise ParameterDomainError(f"kappa must be positive, got {kappa}")
    grid = np.asarray(grid, dtype=float)
    times = traj.t0 + kappa * grid
    q = traj.state_at(times) / kappa
    z = traj.busy_at(times) / kappa
    return ScaledTrajectory(kappa, grid, q, z, tuple(np.asarray(traj.initial, dtype=float) / kappa))


def fluid_prediction(x: Sequence[float], mu: float, grid: np.ndarray) -> np.ndarray | None:
    """Fluid path from (0, 0, 0, x4): buffer 4 drains at μ - 1, the rest stays empty."""
    if any(x[:3]):
        return None
    q = np.zeros((len(grid), 4))
    q[:, 3] = np.maximum(x[3] - (mu - 1.0) * grid, 0.0)
    return q


def _fluid_block(task: tuple) -> list:
    (delta, kappa, x, horizon, points, seed, debug), start, stop = task
    params = derive_params(delta)
    spec = build_ksrs(params)
    grid = np.linspace(0.0, horizon, points)
    x0 = QState(*(int(math.floor(kappa * v)) for v in x))
    prediction = fluid_prediction(x, params.mu, grid)
    out = []
    for rep in range(start, stop):
        sim = init(spec, params, x0, seed, STREAMS["fluid"], replication_key(int(kappa), rep), debug=debug)
        traj = sim.run_until_time(kappa * horizon, grid=sim.t + kappa * grid, keep_events=False)
        scaled = fluid_scale(traj, kappa, grid)
        if prediction is None:
            dev_q4 = dev_norm = math.nan
        else:
            dev_q4 = float(np.max(np.abs(scaled.q_scaled[:, 3] - prediction[:, 3])))
            dev_norm = float(np.max(np.abs(scaled.q_scaled.sum(axis=1) - prediction.sum(axis=1))))
        rows = scaled.q_scaled.tolist() if rep == 0 else None
        out.append((dev_q4, dev_norm, float(scaled.q_scaled[0].sum()), rows))
    return out


def fluid_experiment(
    delta: float,
    kappa_list: Sequence[float],
    reps: int,
    seed: int,
    x: Sequence[float] = ATOM,
    horizon: float = DEFAULT_FLUID_HORIZON,
    points: int = DEFAULT_FLUID_POINTS,
    threads: int = 1,
    debug: bool = False,
) -> ExperimentResult:
    """Median sup-deviation of q^κ from the fluid path for each κ."""
    _require_reps(reps)
    if horizon <= 0 or points < 2:
        raise ParameterDomainError("fluid horizon must be positive with at least 2 grid points")
    started = time.perf_counter()
    params = derive_params(delta)
    x = tuple(float(v) for v in x)
    result = _new_result(
        "fluid", params, seed, reps, kappa_list=list(kappa_list), x=list(x), horizon=horizon, points=points
    )
    if fluid_prediction(x, params.mu, np.zeros(1)) is None:
        result.warn("no closed-form fluid path from this initial state; deviations are not reported")
    grid = np.linspace(0.0, horizon, points)
    rows = []
    medians = []
    for kappa in kappa_list:
        samples = run_replications(
            _fluid_block, (delta, kappa, x, horizon, points, seed, debug), reps, threads, f"fluid k={kappa:g}"
        )
        dev_q4 = np.array([s[0] for s in samples])
        dev_norm = np.array([s[1] for s in samples])
        tag = f"k{kappa:g}"
        median = float(np.median(dev_q4))
        medians.append(median)
        result.add(f"median_sup_dev_q4_{tag}", median)
        _mean(result, f"mean_sup_dev_q4_{tag}", dev_q4)
        result.add(f"median_sup_dev_norm_{tag}", float(np.median(dev_norm)))
        result.add(f"initial_norm_error_{tag}", abs(samples[0][2] - sum(x)))
        for t, q in zip(grid, samples[0][3]):
            rows.append([kappa, float(t), *q])
    finite = [m for m in medians if not math.isnan(m)]
    result.add("median_decreasing", all(a > b for a, b in zip(finite, finite[1:])))
    result.table("scaled", ["kappa", "t", "q1", "q2", "q3", "q4"], rows)
    return _finish(result, started)


# Drain

def _drain_block(task: tuple) -> list:
    (delta, n, horizon_mult, seed, debug), start, stop = task
    params = derive_params(delta)
    spec = build_ksrs(params)
    tau_n = horizon_mult * n / (params.mu - 1.0)
    out = []
    for rep in range(start, stop):
        sim = init(spec, params, QState(0, 0, 0, n), seed, STREAMS["drain"], rep, debug=debug)
        captured: list[int] = []
        last = [sim.norm]

        def watch(s: SimState, kind: int) -> None:
            if not captured and s.t >= tau_n:
                captured.append(last[0])
            last[0] = s.norm

        t4, _ = sim.run_until_hit(lambda q: q.q4 == 0, on_event=watch)
        if captured:
            norm_tau = captured[0]
        else:
            traj = sim.run_until_time(tau_n, grid=np.array([tau_n]), keep_events=False)
            norm_tau = int(traj.grid_states[0].sum())
        out.append((t4, norm_tau))
    return out


def drain_experiment(
    delta: float,
    n: int,
    epsilon: float | Sequence[float],
    reps: int,
    seed: int,
    horizon_mult: float = 1.0,
    threads: int = 1,
    debug: bool = False,
) -> ExperimentResult:
    """Fraction of runs from (0,0,0,n) with ‖Q(τn)‖ <= εn, τ = horizon_mult/(μ4 - 1)."""
    _require_reps(reps)
    epsilons = [epsilon] if isinstance(epsilon, (int, float)) else list(epsilon)
    if n < 1 or any(e <= 0 for e in epsilons) or horizon_mult <= 0:
        raise ParameterDomainError("drain needs n >= 1, epsilon > 0 and a positive horizon multiplier")
    started = time.perf_counter()
    params = derive_params(delta)
    result = _new_result(
        "drain", params, seed, reps, n=n, epsilon=epsilons, horizon_mult=horizon_mult
    )
    if not params.second_moment_holds:
        result.warn("second-moment condition fails at this delta; the drain limit is not guaranteed")
    samples = run_replications(_drain_block, (delta, n, horizon_mult, seed, debug), reps, threads, "drain")
    norms = [s[1] for s in samples]
    main = epsilons[0]
    for eps in epsilons:
        accepted = sum(1 for v in norms if v <= eps * n)
        key = "p_accept" if eps == main else f"p_accept_eps{eps:g}"
        _proportion(result, key, accepted, reps)
    t4 = _mean(result, "mean_T4", [s[0] for s in samples])
    expected = n / (params.mu - 1.0)
    result.add("expected_T4", expected)
    result.add("T4_ratio", t4.mean / expected, t4.stderr / expected)
    result.add("expected_T4_variance", mm1_emptying_variance(n, params.mu))
    result.add("tau_n", horizon_mult * n / (params.mu - 1.0))
    result.table(
        "drain",
        ["rep", "T4", "norm_at_tau_n", "accept"],
        [[rep, t, v, int(v <= main * n)] for rep, (t, v) in enumerate(samples)],
    )
    return _finish(result, started)


# Hold event H and the thinning oracle

def _hold_policy_block(task: tuple) -> list:
    (delta, x4, seed, debug), start, stop = task
    params = derive_params(delta)
    spec = build_ksrs(params)
    out = []
    for rep in range(start, stop):
        sim = init(spec, params, QState(0, 0, 0, x4), seed, STREAMS["holds_policy"], replication_key(x4, rep), debug=debug)
        t4, _ = sim.run_until_hit(lambda q: q.q4 == 0)
        # a flush triggered by the emptying event itself happens at T4, not before it
        before = sim.flush_epochs1 - (1 if sim.last_flushed[0] else 0)
        out.append((t4, before == 0))
    return out


def _hold_oracle_block(task: tuple) -> list:
    (delta, x4, seed), start, stop = task
    params = derive_params(delta)
    out = []
    for rep in range(start, stop):
        rng = RngStream(seed, STREAMS["holds_oracle"], replication_key(x4, rep))
        t, a1 = mm1_thinning_sample(x4, params.mu, rng)
        out.append((t, a1, thinning_weight(a1, params)))
    return out


def hold_event_experiment(
    delta: float,
    x4_list: Sequence[int],
    reps: int,
    seed: int,
    epsilon: float = DEFAULT_WINDOW_EPSILON,
    threads: int = 1,
    debug: bool = False,
) -> ExperimentResult:
    """P(H), H = no buffer-1 flush before T4, by the engine and by the thinning oracle."""
    _require_reps(reps)
    if any(x4 < 1 for x4 in x4_list):
        raise ParameterDomainError("every x4 must be >= 1")
    started = time.perf_counter()
    params = derive_params(delta)
    result = _new_result("holds", params, seed, reps, x4_list=list(x4_list), window_epsilon=epsilon)
    rows = []
    xs, ys = [], []
    base = log_psi_star(1.0, params)
    for x4 in x4_list:
        policy = run_replications(_hold_policy_block, (delta, x4, seed, debug), reps, threads, f"holds x4={x4}")
        oracle = run_replications(_hold_oracle_block, (delta, x4, seed), reps, threads, f"oracle x4={x4}")
        held = sum(1 for _, h in policy if h)
        p_policy = _proportion(result, f"p_hold_policy_x{x4}", held, reps)
        se_policy = result.stderr[f"p_hold_policy_x{x4}"]
        weights = _mean(result, f"p_hold_oracle_x{x4}", [w for _, _, w in oracle])
        z = combined_z(p_policy, se_policy, weights.mean, weights.stderr)
        result.add(f"z_policy_vs_oracle_x{x4}", z)
        if z > 3:
            result.warn(f"policy and thinning oracle disagree at x4={x4} (z={z:.2f})")

        t_policy = [t for t, _ in policy]
        t_oracle = [t for t, _, _ in oracle]
        _mean(result, f"mean_T4_policy_x{x4}", t_policy)
        ks = stats.ks_2samp(t_policy, t_oracle)
        result.add(f"ks_T4_pvalue_x{x4}", float(ks.pvalue))
        result.add(f"ks_T4_statistic_x{x4}", float(ks.statistic))

        lo = (1 - epsilon) ** 2 * x4 / (params.mu - 1.0)
        hi = (1 + epsilon) ** 2 * x4 / (params.mu - 1.0)
        _proportion(result, f"m1_window_x{x4}", sum(1 for _, a1, _ in oracle if lo <= a1 <= hi), reps)

        rows.append([x4, p_policy, weights.mean, math.hypot(se_policy, weights.stderr), se_policy, weights.stderr])
        if p_policy > 0:
            xs.append(log_psi_star(params.gamma4 * x4, params) - base)
            ys.append(-math.log(p_policy))
    if len(xs) >= 2:
        fit = stats.linregress(xs, ys)
        result.add("slope_neg_log_p_vs_log_psi_star", float(fit.slope), float(fit.stderr))
        result.add("intercept", float(fit.intercept))
    result.table("holds", ["x4", "p_hat_policy", "p_hat_oracle", "se", "se_policy", "se_oracle"], rows)
    return _finish(result, started)


# Cascade events

@dataclass(frozen=True)
class CascadeEventSpec:
    epsilon: float
    x4: int
    t4_window: tuple[float, float]
    q2_window: tuple[float, float]
    t24_window: tuple[float, float]
    q4_window: tuple[float, float]

    @classmethod
    def build(cls, epsilon: float, x4: int, params: PolicyParams) -> CascadeEventSpec:
        if not 0 < epsilon < 0.1:
            raise ParameterDomainError(f"window epsilon must lie in (0, 1/10), got {epsilon}")
        if x4 < 1:
            raise ParameterDomainError(f"x4 must be >= 1, got {x4}")
        g4 = 1.0 / (params.mu - 1.0)
        g24 = g4 * g4  # μ2 = μ4

        def window(power: int, scale: float) -> tuple[float, float]:
            return (1 - epsilon) ** power * x4 * scale, (1 + epsilon) ** power * x4 * scale

        return cls(epsilon, x4, window(1, g4), window(2, g4), window(3, g24), window(4, g24))


def _inside(value: float, window: tuple[float, float]) -> bool:
    return window[0] <= value <= window[1]


def full_cycle_holds(params: PolicyParams, w: int, duration: float, end: QState) -> bool:
    """Time and growth windows of one full cycle from (0,0,0,w) ending in `end`."""
    if end.q1 or end.q2 or end.q3 or end.q4 == 0 or duration <= 0:
        return False
    g, g24 = params.gamma, params.gamma24
    ratio = end.q4 / duration
    return g * w / 2 <= duration <= 2 * g * w and g24 / (2 * g) <= ratio <= 2 * g24 / g


def _cascade_block(task: tuple) -> list:
    (delta, x4, epsilon, full, seed, debug), start, stop = task
    params = derive_params(delta)
    spec = build_ksrs(params)
    windows = CascadeEventSpec.build(epsilon, x4, params)
    out = []
    for rep in range(start, stop):
        sim = init(spec, params, QState(0, 0, 0, x4), seed, STREAMS["cascade"], replication_key(x4, rep), debug=debug)
        t4, q = sim.run_until_hit(lambda s: s.q4 == 0)
        e4 = _inside(t4, windows.t4_window)
        shape1 = q.q1 == 0 and q.q3 == 0 and q.q2 > 0
        e1 = shape1 and _inside(q.q2, windows.q2_window)
        e42 = e13 = relaxed = cycle = False
        if full and shape1:
            t24, q = sim.run_until_hit(lambda s: s.q2 == 0, strict=True)
            shape13 = q.q1 == 0 and q.q2 == 0 and q.q3 == 0 and q.q4 > 0
            e42 = _inside(t24 - t4, windows.t24_window)
            e13 = shape13 and _inside(q.q4, windows.q4_window)
            relaxed = shape13
            cycle = full_cycle_holds(params, x4, t24, q)
        out.append((e4, e1, e42, e13, relaxed, cycle))
    return out


def cascade_experiment(
    delta: float,
    x4: int,
    epsilon: float,
    reps: int,
    seed: int,
    stage: str = "E4E1",
    threads: int = 1,
    debug: bool = False,
) -> ExperimentResult:
    """Window events of one cascade from (0,0,0,x4); stage `full` also follows buffer 2 to empty."""
    _require_reps(reps)
    if stage not in ("E4E1", "full"):
        raise ParameterDomainError(f"stage must be E4E1 or full, got {stage!r}")
    started = time.perf_counter()
    params = derive_params(delta)
    windows = CascadeEventSpec.build(epsilon, x4, params)
    result = _new_result("cascade", params, seed, reps, x4=x4, window_epsilon=epsilon, stage=stage)
    result.add("windows", {
        "T4": list(windows.t4_window),
        "Q2_T4": list(windows.q2_window),
        "T24_minus_T4": list(windows.t24_window),
        "Q4_T24": list(windows.q4_window),
    })
    result.add("window_below_2_gamma4_x4", windows.q2_window[1] < 2 * params.gamma4 * x4)
    full = stage == "full"
    samples = run_replications(_cascade_block, (delta, x4, epsilon, full, seed, debug), reps, threads, "cascade")

    def count(pred: Callable[[tuple], bool]) -> int:
        return sum(1 for s in samples if pred(s))

    _proportion(result, "p_E4", count(lambda s: s[0]), reps)
    _proportion(result, "p_E1", count(lambda s: s[1]), reps)
    p41 = _proportion(result, "p_E4_E1", count(lambda s: s[0] and s[1]), reps)
    if p41 == 0:
        result.warn("no replication reached E4 and E1; only the one-sided bound is informative")
        result.add("p_E4_E1_upper", zero_count_upper_bound(reps))
    result.add("log_psi_star_2g4x4", log_psi_star(2 * params.gamma4 * x4, params))
    if full:
        _proportion(result, "p_all_windows", count(lambda s: all(s[:4])), reps)
        _proportion(result, "p_full_cycle", count(lambda s: s[5]), reps)
        _proportion(result, "p_state_only_cycle", count(lambda s: s[4]), reps)
        result.add("log_psi_star_4g24x4", log_psi_star(4 * params.gamma24 * x4, params))
        result.warn("p_state_only_cycle checks emptiness patterns only, a relaxation of the window events")
    return _finish(result, started)


def cascade_bound_report(n_max: int, alpha: float, delta: float) -> dict:
    params = derive_params(delta)
    return {str(n): cascade_bound(n, alpha, params).to_json() for n in range(1, n_max + 1)}


# Tail occupation and the sup-ratio statistic

class SupRatioTracker:
    """sup_{s_j <= t <= now} ‖Q(t)‖/t on a geometric grid s_j, exact over the simulated horizon."""

    def __init__(self, norm: int, s_min: float = SUP_RATIO_MIN_TIME, ratio: float = SUP_RATIO_GRID_RATIO,
                 points: int = DEFAULT_SUP_RATIO_POINTS):
        self.grid = [s_min * ratio**j for j in range(points)]
        self.boundary: list[float] = []  # ‖Q(s_j)‖/s_j
        self.bucket: list[float] = []  # max of ‖Q(t)‖/t over event times in [s_j, s_j+1)
        self.norm = norm

    def observe(self, t: float, norm: int) -> None:
        grid = self.grid
        while len(self.boundary) < len(grid) and t >= grid[len(self.boundary)]:
            s = grid[len(self.boundary)]
            self.boundary.append(self.norm / s)
            self.bucket.append(0.0)
        if self.bucket:
            v = norm / t
            if v > self.bucket[-1]:
                self.bucket[-1] = v
        self.norm = norm

    def sup_ratio(self) -> list[tuple[float, float]]:
        out = []
        best = 0.0
        for j in range(len(self.boundary) - 1, -1, -1):
            best = max(best, self.boundary[j], self.bucket[j])
            out.append((self.grid[j], best))
        return out[::-1]


def tail_occupation(
    delta: float,
    total_events: int,
    burn_in: int,
    seed: int,
    debug: bool = False,
) -> ExperimentResult:
    """One long run from x*: occupation of ‖q‖, its ccdf, moments and the sup-ratio statistic."""
    if total_events < 1 or burn_in < 0:
        raise ParameterDomainError("tail needs events >= 1 and burn_in >= 0")
    started = time.perf_counter()
    params = derive_params(delta)
    result = _new_result("tail", params, seed, 1, events=total_events, burn_in=burn_in)
    atom = QState(*ATOM)
    sim = init(build_ksrs(params), params, atom, seed, STREAMS["tail"], debug=debug)
    tracker = SupRatioTracker(sim.norm)
    for _ in range(burn_in):
        record = sim.next_event()
        tracker.observe(record.t, record.state_after.norm)

    durations: list[float] = []
    integrals: list[tuple[float, ...]] = []
    chunk_hists: list[OccupationHistogram] = []
    chunk_tau: list[float] = []
    current = OccupationHistogram()
    current_tau = 0.0
    in_chunk = 0
    visited_zero = 0
    for cycle in sim.iter_cycles(atom, max_events=total_events, on_event=tracker.observe):
        durations.append(cycle.duration)
        integrals.append(cycle.norm_integrals)
        visited_zero += cycle.visited_zero
        current.time_by_bin.update(cycle.occupation)
        current_tau += cycle.duration
        in_chunk += 1
        if in_chunk == TAIL_CHUNK_CYCLES:
            chunk_hists.append(current)
            chunk_tau.append(current_tau)
            current, current_tau, in_chunk = OccupationHistogram(), 0.0, 0
    if in_chunk:
        chunk_hists.append(current)
        chunk_tau.append(current_tau)

    n_cycles = len(durations)
    result.add("cycles", n_cycles)
    result.add("events_simulated", sim.events)
    result.add("t_end", sim.t)
    if n_cycles < MIN_REGEN_CYCLES:
        result.warn(f"insufficient regeneration cycles ({n_cycles} < {MIN_REGEN_CYCLES}); intervals are unreliable")
    if n_cycles == 0:
        return _finish(result, started)

    _mean(result, "mean_cycle_length", durations)
    result.add("cycle_length_lag1_autocorrelation", lag1_autocorrelation(durations))
    result.add("fraction_cycles_visiting_zero", visited_zero / n_cycles)

    integ = np.asarray(integrals)
    half = n_cycles // 2
    for p in range(1, 5):
        m, se = ratio_estimate(integ[:, p - 1], durations)
        result.add(f"moment_p{p}", m, se)
        if half >= 2:
            a, se_a = ratio_estimate(integ[:half, p - 1], durations[:half])
            b, se_b = ratio_estimate(integ[half:, p - 1], durations[half:])
            result.add(f"half_run_z_p{p}", combined_z(a, se_a, b, se_b))

    merged = OccupationHistogram()
    for h in chunk_hists:
        merged = merged.merge(h)
    edges, weights = merged.weights()
    result.add("occupation_weight_sum", math.fsum(weights))
    result.table("occupation", ["norm_lower_edge", "weight"], [[int(e), float(w)] for e, w in zip(edges, weights)])

    levels = np.unique(np.concatenate([[0], edges[edges > 0] - 1]))
    total = merged.total_time
    p_hat = merged.time_above(levels) / total
    above = np.vstack([h.time_above(levels) for h in chunk_hists])
    z = z_value(CONFIDENCE_LEVEL)
    rows, overlay = [], []
    for i, s in enumerate(levels):
        _, se = ratio_estimate(above[:, i], chunk_tau)
        se = 0.0 if math.isnan(se) else se
        rows.append([int(s), float(p_hat[i]), max(0.0, p_hat[i] - z * se), min(1.0, p_hat[i] + z * se)])
        if s > 0 and p_hat[i] > 0:
            overlay.append([int(s), -math.log(p_hat[i]), math.log(s) ** 2])
    result.add("ccdf_non_increasing", bool(np.all(np.diff(p_hat) <= 0)))
    result.table("ccdf", ["s", "p_hat", "ci_lo", "ci_hi"], rows)
    result.table("tail_overlay", ["s", "neg_log_p", "log_s_squared"], overlay)

    sup = tracker.sup_ratio()
    result.table("sup_ratio", ["s", "sup_ratio_lower_bound"], [[s, v] for s, v in sup])
    result.add("ratio_delta", ratio_delta(params))
    if sup:
        result.add("sup_ratio_at_last_grid_point", sup[-1][1])
    return _finish(result, started)


# Appendix oracles

def _mm1_block(task: tuple) -> list:
    (n, mu, seed), start, stop = task
    return [mm1_emptying_time(n, mu, RngStream(seed, STREAMS["mm1"], rep)) for rep in range(start, stop)]


def mm1_emptying_oracle(
    n: int,
    mu: float,
    reps: int,
    seed: int,
    epsilon: float = DEFAULT_MM1_EPSILON,
    threads: int = 1,
) -> ExperimentResult:
    """Plain M/M/1 (arrival rate 1) from n jobs to empty."""
    _require_reps(reps)
    if mu <= 1 or n < 1 or epsilon <= 0:
        raise ParameterDomainError(f"mm1 needs mu > 1, n >= 1 and epsilon > 0; got mu={mu}, n={n}")
    started = time.perf_counter()
    result = _new_result("mm1", None, seed, reps, n=n, mu=mu, epsilon=epsilon)
    times = np.asarray(run_replications(_mm1_block, (n, mu, seed), reps, threads, "mm1"))
    expected = n / (mu - 1.0)
    acc = _mean(result, "mean_T", times)
    result.add("variance_T", acc.variance)
    result.add("expected_mean", expected)
    result.add("expected_variance", mm1_emptying_variance(n, mu))
    result.add("relative_error_mean", abs(acc.mean - expected) / expected)
    inside = int(np.sum(np.abs(times / expected - 1.0) < epsilon))
    _proportion(result, "window_frequency", inside, reps)
    return _finish(result, started)


def poisson_ld_check(
    nu: float,
    t_list: Sequence[float],
    epsilon: float,
    reps: int,
    seed: int,
) -> ExperimentResult:
    """P(|N(t) - νt| > εt) per t and the fitted exponential rate."""
    _require_reps(reps)
    if nu <= 0:
        raise ParameterDomainError(f"nu must be positive, got {nu}")
    if epsilon <= 0:
        raise ParameterDomainError(f"epsilon must be positive, got {epsilon}")
    if not t_list or any(t <= 0 for t in t_list):
        raise ParameterDomainError("every t must be positive")
    started = time.perf_counter()
    result = _new_result("ld", None, seed, reps, nu=nu, t_list=list(t_list), epsilon=epsilon)
    ts, neg_logs = [], []
    rows = []
    for i, t in enumerate(t_list):
        counts = poisson_counts(nu, t, reps, seed, STREAMS["ld"], i)
        deviations = int(np.sum(np.abs(counts - nu * t) > epsilon * t))
        key = f"p_dev_t{t:g}"
        if deviations == 0:
            upper = zero_count_upper_bound(reps)
            result.add(f"{key}_upper", upper)
            result.warn(f"no deviations observed at t={t:g}; reporting a one-sided bound")
            rows.append([t, 0.0, 0.0, upper])
            continue
        p = _proportion(result, key, deviations, reps)
        lo, hi = result.estimates[f"{key}_ci"]
        rows.append([t, p, lo, hi])
        ts.append(t)
        neg_logs.append(-math.log(p))
    result.add("chernoff_rate", poisson_chernoff_rate(nu, epsilon))
    if len(ts) >= 2:
        fit = stats.linregress(ts, neg_logs)
        result.add("fitted_rate", float(fit.slope), float(fit.stderr))
        result.add("fitted_intercept", float(fit.intercept))
    else:
        result.warn("fewer than two t values with observed deviations; no rate fit")
    result.table("ld", ["t", "p_hat", "ci_lo", "ci_hi"], rows)
    return _finish(result, started)


# Lyapunov V_p

def _vp_sample(sim: SimState, horizon: int, p: int) -> float:
    return sim.norm**p + sim.norm_power_sum(horizon, p)


def _vp_mean(spec, params, state: QState, p: int, t_mult: float, reps: int, seed: int, index: int, slot: int,
             debug: bool) -> MeanAccumulator:
    acc = MeanAccumulator()
    horizon = vp_horizon(state.norm, t_mult)
    for rep in range(reps):
        sim = init(spec, params, state, seed, STREAMS["drift"], replication_key(index, slot, rep), debug=debug)
        acc.add(_vp_sample(sim, horizon, p))
    return acc


def _drift_state(task: tuple) -> dict:
    delta, p, t_mult, state, index, inner_reps, seed, debug = task
    params = derive_params(delta)
    spec = build_ksrs(params)
    x = QState(*state)
    hx = vp_horizon(x.norm, t_mult)
    v = _vp_mean(spec, params, x, p, t_mult, inner_reps, seed, index, 0, debug)

    pv = 0.0
    pv_var = 0.0
    for slot, (prob, _, y) in enumerate(successor_distribution(x, spec, params), start=1):
        vy = _vp_mean(spec, params, y, p, t_mult, inner_reps, seed, index, slot, debug)
        pv += prob * vy.mean
        pv_var += (prob * vy.stderr) ** 2 if inner_reps >= 2 else 0.0

    # E_x[Σ_{t=1}^{H(X(1))+1} - Σ_{t=1}^{H(x)}] estimated directly on fresh paths
    boundary = MeanAccumulator()
    for rep in range(inner_reps):
        sim = init(spec, params, x, seed, STREAMS["drift_boundary"], replication_key(index, rep), debug=debug)
        sim.next_event()
        upper = vp_horizon(sim.norm, t_mult) + 1
        norms = [sim.norm**p]
        while len(norms) < max(hx, upper):
            sim.next_event()
            norms.append(sim.norm**p)
        if upper >= hx:
            boundary.add(float(sum(norms[hx:upper])))
        else:
            boundary.add(-float(sum(norms[upper:hx])))

    return {
        "state": list(x),
        "norm": x.norm,
        "horizon": hx,
        "v": v.mean,
        "v_se": v.stderr,
        "pv": pv,
        "pv_se": math.sqrt(pv_var),
        "boundary": boundary.mean,
        "boundary_se": boundary.stderr,
    }


def drift_estimate(
    delta: float,
    p: int,
    t_mult: float,
    state_list: Sequence[QState],
    inner_reps: int,
    seed: int,
    threads: int = 1,
    debug: bool = False,
) -> ExperimentResult:
    """V̂_p, the one-step expectation P V̂_p over the exact kernel, and the drift residual."""
    if p not in (1, 2):
        raise ParameterDomainError(f"p must be 1 or 2, got {p}")
    if t_mult <= 0:
        raise ParameterDomainError(f"T_mult must be positive, got {t_mult}")
    _require_reps(inner_reps)
    started = time.perf_counter()
    params = derive_params(delta)
    states = [QState(*s) for s in state_list]
    result = _new_result(
        "drift", params, seed, inner_reps, p=p, T_mult=t_mult, states=[list(s) for s in states]
    )
    if inner_reps < MIN_INNER_REPS:
        result.warn(f"inner_reps={inner_reps} below {MIN_INNER_REPS}; nested estimates are noisy")
    tasks = [(delta, p, t_mult, tuple(s), i, inner_reps, seed, debug) for i, s in enumerate(states)]
    rows = []
    xs, ys = [], []
    for out in _map_tasks(_drift_state, tasks, threads, "drift"):
        tag = "_".join(map(str, out["state"]))
        norm_p = out["norm"] ** p
        residual = out["pv"] - out["v"] + norm_p
        residual_se = math.hypot(out["pv_se"], out["v_se"]) if inner_reps >= 2 else math.nan
        result.add(f"V_{tag}", out["v"], out["v_se"])
        result.add(f"PV_{tag}", out["pv"], out["pv_se"])
        result.add(f"drift_residual_{tag}", residual, residual_se)
        result.add(f"boundary_term_{tag}", out["boundary"], out["boundary_se"])
        if inner_reps >= 2:
            result.add(f"rearrangement_z_{tag}", combined_z(residual, residual_se, out["boundary"], out["boundary_se"]))
        lower, upper = vp_sandwich(out["norm"], p, t_mult)
        result.add(f"sandwich_{tag}", [lower, upper])
        if not lower <= out["v"] <= upper:
            result.warn(f"V estimate at {tag} lies outside the skip-free sandwich")
        if out["v"] > 0 and out["v_se"] / out["v"] > MAX_REL_STDERR:
            result.warn(f"relative stderr of V at {tag} exceeds {MAX_REL_STDERR}")
        rows.append([out["norm"], *out["state"], out["horizon"], out["v"], out["v_se"], out["pv"], residual,
                     out["boundary"], lower, upper])
        if out["norm"] > 0 and out["v"] > 0:
            xs.append(math.log(out["norm"]))
            ys.append(math.log(out["v"]))
    if len(xs) >= 2:
        fit = stats.linregress(xs, ys)
        result.add("growth_exponent", float(fit.slope), float(fit.stderr))
    result.table(
        "drift",
        ["norm", "q1", "q2", "q3", "q4", "horizon", "V", "V_se", "PV", "residual", "boundary", "lower", "upper"],
        rows,
    )
    return _finish(result, started)


# Server emptying and repeated cycles

def _empty_block(task: tuple) -> list:
    (delta, x, seed, debug), start, stop = task
    params = derive_params(delta)
    spec = build_ksrs(params)
    out = []
    for rep in range(start, stop):
        sim = init(spec, params, QState(*x), seed, STREAMS["empty"], rep, debug=debug)
        t, q = sim.run_until_hit(lambda s: s.q1 == 0 and s.q3 == 0 and (s.q2 == 0 or s.q4 == 0))
        out.append((t, q.norm))
    return out


def empty_server_experiment(
    delta: float,
    x: QState,
    reps: int,
    seed: int,
    c1: float | None = None,
    c2: float = DEFAULT_EMPTY_C2,
    threads: int = 1,
    debug: bool = False,
) -> ExperimentResult:
    """Law of T = min(T̄2, T̄4) and ‖Q(T)‖, both scaled by ‖x‖."""
    _require_reps(reps)
    x = QState(*x)
    if x.norm < 1:
        raise ParameterDomainError("initial state must be non-zero")
    started = time.perf_counter()
    params = derive_params(delta)
    c1 = 4 * params.gamma4 if c1 is None else c1
    result = _new_result("empty", params, seed, reps, init=list(x), c1=c1, c2=c2)
    samples = run_replications(_empty_block, (delta, tuple(x), seed, debug), reps, threads, "empty")
    n = x.norm
    _mean(result, "T_over_norm", [t / n for t, _ in samples])
    _mean(result, "norm_at_T_over_norm", [v / n for _, v in samples])
    _proportion(result, "p_within_bounds", sum(1 for t, v in samples if t <= c1 * n and v <= c2 * n), reps)
    result.table("empty", ["rep", "T", "norm_at_T"], [[i, t, v] for i, (t, v) in enumerate(samples)])
    return _finish(result, started)


def _cycles_block(task: tuple) -> list:
    (delta, n_max, seed, debug), start, stop = task
    params = derive_params(delta)
    spec = build_ksrs(params)
    out = []
    for rep in range(start, stop):
        sim = init(spec, params, QState(*ATOM), seed, STREAMS["cycles"], rep, debug=debug)
        relaxed = strict = 0
        strict_alive = True
        growth: list[float] = []
        ratio_at_end = math.nan
        for _ in range(n_max):
            begin, w = sim.t, sim.q.q4
            _, q = sim.run_until_hit(lambda s: s.q4 == 0)
            if q.q1 or q.q3 or q.q2 == 0:
                break
            end_t, q = sim.run_until_hit(lambda s: s.q2 == 0, strict=True)
            if q.q1 or q.q2 or q.q3 or q.q4 == 0:
                break
            relaxed += 1
            growth.append(q.q4 / w)
            ratio_at_end = q.norm / end_t
            if strict_alive and full_cycle_holds(params, w, end_t - begin, q):
                strict += 1
            else:
                strict_alive = False
        out.append((relaxed, strict, growth, ratio_at_end))
    return out


def multicycle_experiment(
    delta: float,
    n_max: int,
    reps: int,
    seed: int,
    threads: int = 1,
    debug: bool = False,
) -> ExperimentResult:
    """Consecutive full cycles from x*, against the shape of the cascade lower bound."""
    _require_reps(reps)
    if n_max < 1:
        raise ParameterDomainError(f"n_max must be >= 1, got {n_max}")
    started = time.perf_counter()
    params = derive_params(delta)
    result = _new_result("cycles", params, seed, reps, n_max=n_max)
    result.warn("state-only cycles check emptiness patterns only, a relaxation of the full-cycle windows")
    samples = run_replications(_cycles_block, (delta, n_max, seed, debug), reps, threads, "cycles")
    threshold = ratio_delta(params)
    result.add("ratio_delta", threshold)
    rows = []
    ns, gaps = [], []
    for n in range(1, n_max + 1):
        p_relaxed = _proportion(result, f"p_E{n}_state_only", sum(1 for s in samples if s[0] >= n), reps)
        p_strict = _proportion(result, f"p_E{n}_windows", sum(1 for s in samples if s[1] >= n), reps)
        bound = cascade_bound(n, 1.0, params)
        result.add(f"log_bound_alpha1_n{n}", bound.log_bound)
        result.add(f"log_time_threshold_n{n}", bound.log_time_threshold)
        rows.append([n, p_relaxed, p_strict, bound.log_bound, bound.log_time_threshold])
        if p_strict > 0:
            ns.append(n)
            gaps.append(math.log(p_strict) - bound.log_bound)
    growth = [g for s in samples for g in s[2]]
    if growth:
        _mean(result, "mean_log_growth", [math.log(g) for g in growth])
    reached = [s[3] for s in samples if s[0] >= 1]
    if reached:
        result.add("fraction_ratio_above_ratio_delta", sum(1 for r in reached if r > threshold) / len(reached))
    if len(ns) >= 2:
        fit = stats.linregress(ns, gaps)
        result.add("fitted_alpha", math.exp(fit.slope))
    result.table("cycles", ["n", "p_state_only", "p_windows", "log_bound_alpha1", "log_time_threshold"], rows)
    return _finish(result, started)
