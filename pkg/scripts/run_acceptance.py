"""Long Monte-Carlo acceptance runs. Writes artifacts under runs/acceptance/."""

import argparse
import json
import os
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import ATOM, DEFAULT_SEED, OUTPUT_DIR, STREAMS
from modules import experiments
from modules.artifacts import write_result
from modules.engine import init
from modules.logs import configure_logging
from modules.netmodel import InvariantViolation, QState, build_ksrs
from modules.policy import derive_params

ACCEPTANCE_DIR = OUTPUT_DIR / "acceptance"
outcomes = []


def record(name, ok, detail):
    outcomes.append((name, ok, detail))
    print(f"  [{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def save(result, name):
    return write_result(result, ACCEPTANCE_DIR, name)


def run_mm1(seed, threads):
    result = experiments.mm1_emptying_oracle(50, 1.1, 10**4, seed, threads=threads)
    save(result, "mm1")
    err = result.estimates["relative_error_mean"]
    record("M/M/1 mean within 3% of 500", err <= 0.03, f"mean={result.estimates['mean_T']:.2f}")


def run_equivalence(seed, threads):
    result = experiments.hold_event_experiment(0.1, [20], 2000, seed, threads=threads)
    save(result, "equivalence")
    pvalue = result.estimates["ks_T4_pvalue_x20"]
    record("T4 under the engine matches plain M/M/1 (KS, 1%)", pvalue > 0.01, f"p={pvalue:.3g}")


def run_drain(seed, threads):
    result = experiments.drain_experiment(0.02, 10**4, 0.3, 100, seed, threads=threads)
    save(result, "drain")
    p = result.estimates["p_accept"]
    record("fraction with |Q(tau n)| <= 0.3n at least 0.9", p >= 0.9, f"p={p:.3f}")


def run_holds(seed, threads):
    x4_list = [10, 20, 40, 80]
    result = experiments.hold_event_experiment(0.2, x4_list, 10**5, seed, threads=threads)
    save(result, "holds")
    worst = max(result.estimates[f"z_policy_vs_oracle_x{x4}"] for x4 in x4_list)
    slope = result.estimates.get("slope_neg_log_p_vs_log_psi_star", float("nan"))
    record("policy vs thinning oracle within 3 se", worst <= 3, f"max z={worst:.2f}")
    record("regression slope in [0.7, 1.3]", 0.7 <= slope <= 1.3, f"slope={slope:.3f}")


def run_cascade(seed, threads):
    result = experiments.cascade_experiment(0.2, 40, 0.09, 10**6, seed, "E4E1", threads)
    save(result, "cascade")
    lo, _ = result.estimates["p_E4_E1_ci"]
    record("P(E4 and E1) > 0 with CI excluding 0", lo > 0, f"p={result.estimates['p_E4_E1']:.3g}")
    relaxed = experiments.cascade_experiment(0.2, 1, 0.09, 10**5, seed, "full", threads)
    save(relaxed, "cascade_state_only")
    p = relaxed.estimates["p_state_only_cycle"]
    record("state-only full cycle from x* positive", p > 0, f"p={p:.3g}")


def run_skip_free(seed, events=10**7):
    params = derive_params(0.2)
    sim = init(build_ksrs(params), params, QState(*ATOM), seed, STREAMS["simulate"], debug=True)
    try:
        for _ in range(events):
            sim.next_event()
    except InvariantViolation as exc:
        record("skip-free and stability invariants", False, str(exc))
        return
    record("skip-free and stability invariants", True, f"{events} events, t={sim.t:.1f}")


def run_determinism(seed):
    from app import dispatch
    runs = []
    for threads in (1, 2):
        name = f"determinism_threads{threads}"
        argv = ["holds", "--delta", "0.2", "--x4-list", "10,20", "--reps", "500", "--seed", str(seed),
                "--threads", str(threads), "--output-dir", str(ACCEPTANCE_DIR), "--run-name", name]
        assert dispatch(argv) == 0
        doc = json.loads((ACCEPTANCE_DIR / name / "result.json").read_text())
        for key in ("timing", "artifacts", "config"):
            doc.pop(key)
        lines = (ACCEPTANCE_DIR / name / "holds.csv").read_text().splitlines()
        runs.append((doc, [line for line in lines if not line.startswith("#")]))
    same = runs[0] == runs[1]
    record("identical numeric output for 1 and 2 threads", same, "compared result.json and holds.csv")


def run_fluid(seed, threads):
    result = experiments.fluid_experiment(0.1, [100, 1000, 10000], 50, seed, threads=threads)
    save(result, "fluid")
    last = result.estimates["median_sup_dev_q4_k10000"]
    ok = result.estimates["median_decreasing"] and last < 0.15
    record("sup-deviation decreasing and < 0.15 at 1e4", ok, f"median at 1e4={last:.4f}")


def run_drift(seed, threads):
    params = derive_params(0.1)
    states = [QState(0, 0, 0, n) for n in (5, 10, 20, 40)]
    result = experiments.drift_estimate(0.1, 1, 4 * params.gamma4, states, 1000, seed, threads)
    save(result, "drift")
    slope = result.estimates.get("growth_exponent", float("nan"))
    record("growth exponent of V1 in [1.6, 2.4]", 1.6 <= slope <= 2.4, f"exponent={slope:.3f}")


STAGES = {
    "mm1": run_mm1,
    "equivalence": run_equivalence,
    "drain": run_drain,
    "holds": run_holds,
    "cascade": run_cascade,
    "skip-free": lambda seed, threads: run_skip_free(seed),
    "determinism": lambda seed, threads: run_determinism(seed),
    "fluid": run_fluid,
    "drift": run_drift,
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("stages", nargs="*", default=list(STAGES), help="subset such as mm1 skip-free")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    args = parser.parse_args()
    configure_logging("error")

    print(f"\nKSRS lab - acceptance runs (seed={args.seed}, threads={args.threads})\n" + "=" * 40)
    start = time.time()
    for name in args.stages:
        print(f"\n{name}:")
        stage_start = time.time()
        STAGES[name](args.seed, args.threads)
        print(f"  ({time.time() - stage_start:.1f}s)")

    elapsed = time.time() - start
    passed = sum(1 for _, ok, _ in outcomes if ok)
    print("\n" + "=" * 40)
    print(f"Results: {passed}/{len(outcomes)} passed in {elapsed:.1f}s")
    print(f"Artifacts at: {ACCEPTANCE_DIR}")
    sys.exit(0 if passed == len(outcomes) else 1)


if __name__ == "__main__":
    main()
