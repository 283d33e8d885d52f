"""KSRS lab - command-line entry point and experiment orchestrator."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from types import NoneType
from typing import get_args, get_origin, get_type_hints

from config import (
    DEFAULT_BURN_IN,
    DEFAULT_CASCADE_X4,
    DEFAULT_DELTA,
    DEFAULT_DRAIN_EPSILON,
    DEFAULT_DRAIN_N,
    DEFAULT_DRIFT_NORMS,
    DEFAULT_DRIFT_P,
    DEFAULT_EMPTY_C2,
    DEFAULT_FLUID_HORIZON,
    DEFAULT_FLUID_POINTS,
    DEFAULT_INNER_REPS,
    DEFAULT_KAPPA_LIST,
    DEFAULT_LD_EPSILON,
    DEFAULT_LD_NU,
    DEFAULT_LD_TIMES,
    DEFAULT_MM1_EPSILON,
    DEFAULT_MM1_MU,
    DEFAULT_MM1_N,
    DEFAULT_MULTICYCLE_NMAX,
    DEFAULT_PSI_KMAX,
    DEFAULT_REPS,
    DEFAULT_SEED,
    DEFAULT_SIM_HORIZON,
    DEFAULT_TAIL_EVENTS,
    DEFAULT_WINDOW_EPSILON,
    DEFAULT_X4_LIST,
    EXIT_CAP,
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_VALIDATION,
    OUTPUT_DIR,
    SUBCOMMANDS,
    VERSION,
)
from modules import experiments
from modules.artifacts import ExperimentResult, write_result
from modules.logs import configure_logging, debug_enabled, get_logger
from modules.netmodel import (
    CapExceededError,
    KsrsError,
    ParameterDomainError,
    QState,
    RangeError,
    UnsupportedTopologyError,
)
from modules.oracles import telescoped_gap
from modules.policy import derive_params

logger = get_logger("app")

# estimates echoed on the summary line, per subcommand
HEADLINES = {
    "params": ["regime", "eta", "eta_condition_holds", "second_moment_holds", "hold_count_mean_finite"],
    "psi": ["max_rel_error", "summability_partial_last"],
    "simulate": ["events", "t_end", "max_norm"],
    "mm1": ["mean_T", "expected_mean", "window_frequency"],
    "ld": ["fitted_rate", "chernoff_rate"],
    "drain": ["p_accept", "T4_ratio"],
    "holds": ["slope_neg_log_p_vs_log_psi_star"],
    "cascade": ["p_E4_E1", "p_full_cycle", "p_state_only_cycle"],
    "tail": ["cycles", "moment_p1", "occupation_weight_sum"],
    "drift": ["growth_exponent"],
    "fluid": ["median_decreasing"],
    "empty": ["T_over_norm", "p_within_bounds"],
    "cycles": ["p_E1_state_only", "fitted_alpha"],
}


def _coerce(key: str, value, hint):
    """Bring a config-file value to the field type, or raise ParameterDomainError."""
    args = [a for a in get_args(hint) if a is not NoneType]
    if get_origin(hint) is not list and len(args) == 1:
        hint = args[0]
    try:
        if get_origin(hint) is list:
            (item,) = get_args(hint)
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return [_coerce(key, v, item) for v in value]
        if hint is bool:
            if isinstance(value, str) and value.lower() in ("true", "false"):
                return value.lower() == "true"
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(value, bool) or isinstance(value, (list, dict)):
            raise TypeError
        if hint is int:
            number = float(value)
            if not number.is_integer():
                raise ValueError
            return int(number)
        if hint is float:
            return float(value)
        if not isinstance(value, str):
            raise TypeError
        return value
    except (TypeError, ValueError):
        raise ParameterDomainError(f"configuration field {key!r} has the wrong type: {value!r}") from None


@dataclass
class RunConfig:
    subcommand: str
    delta: float = DEFAULT_DELTA
    seed: int = DEFAULT_SEED
    reps: int = DEFAULT_REPS
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    output_dir: str = str(OUTPUT_DIR)
    run_name: str | None = None
    log_level: str | None = None
    debug: bool = False
    # subcommand numerics
    k_max: int = DEFAULT_PSI_KMAX
    init: str = "0,0,0,1"
    horizon: float | None = None
    policy: str = "psi"
    n: int | None = None
    mu: float = DEFAULT_MM1_MU
    nu: float = DEFAULT_LD_NU
    t_list: list[float] = field(default_factory=lambda: list(DEFAULT_LD_TIMES))
    epsilon: float | None = None
    horizon_mult: float = 1.0
    x4: int = DEFAULT_CASCADE_X4
    x4_list: list[int] = field(default_factory=lambda: list(DEFAULT_X4_LIST))
    stage: str = "E4E1"
    alpha: float = 1.0
    bound_n: int = DEFAULT_MULTICYCLE_NMAX
    events: int = DEFAULT_TAIL_EVENTS
    burn_in: int = DEFAULT_BURN_IN
    p: int = DEFAULT_DRIFT_P
    t_mult: float | None = None
    norms: list[int] = field(default_factory=lambda: list(DEFAULT_DRIFT_NORMS))
    inner_reps: int = DEFAULT_INNER_REPS
    kappa_list: list[float] = field(default_factory=lambda: list(DEFAULT_KAPPA_LIST))
    points: int = DEFAULT_FLUID_POINTS
    c1: float | None = None
    c2: float = DEFAULT_EMPTY_C2
    n_max: int = DEFAULT_MULTICYCLE_NMAX

    @classmethod
    def resolve(cls, subcommand: str, file_values: dict, flag_values: dict) -> RunConfig:
        """config.py defaults < --config file < flags."""
        known = {f.name for f in fields(cls)}
        hints = get_type_hints(cls)
        merged: dict = {}
        for source in (file_values, flag_values):
            for key, value in source.items():
                key = key.replace("-", "_")
                if key not in known:
                    raise ParameterDomainError(f"unknown configuration field {key!r}")
                if value is not None:
                    merged[key] = _coerce(key, value, hints[key])
        merged["subcommand"] = subcommand
        return cls(**merged)

    def validate(self) -> None:
        """Check every numeric precondition before anything is simulated."""
        if self.subcommand not in SUBCOMMANDS:
            raise ParameterDomainError(f"unknown subcommand {self.subcommand!r}")
        if self.reps < 1 or self.threads < 1:
            raise ParameterDomainError("reps and threads must be positive")
        if self.subcommand not in ("mm1", "ld"):
            derive_params(self.delta)
        cmd = self.subcommand
        if cmd == "psi" and self.k_max < 1:
            raise ParameterDomainError("k-max must be >= 1")
        if cmd in ("simulate", "empty"):
            state = QState.parse(self.init)
            if cmd == "empty" and state.norm < 1:
                raise ParameterDomainError("empty needs a non-zero initial state")
        if cmd == "simulate" and self.horizon is not None and self.horizon < 0:
            raise ParameterDomainError("horizon must be non-negative")
        if cmd == "mm1" and (self.mu <= 1 or self.n is not None and self.n < 1):
            raise ParameterDomainError("mm1 needs mu > 1 and n >= 1")
        if cmd == "ld" and (self.nu <= 0 or any(t <= 0 for t in self.t_list)):
            raise ParameterDomainError("ld needs nu > 0 and positive times")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ParameterDomainError("epsilon must be positive")
        if cmd == "cascade" and self.epsilon is not None and self.epsilon >= 0.1:
            raise ParameterDomainError("cascade window epsilon must lie in (0, 1/10)")
        if cmd == "cascade" and (self.x4 < 1 or self.stage not in ("E4E1", "full") or not 0 < self.alpha <= 1):
            raise ParameterDomainError("cascade needs x4 >= 1, stage E4E1|full and alpha in (0, 1]")
        if cmd == "holds" and any(x < 1 for x in self.x4_list):
            raise ParameterDomainError("every x4 must be >= 1")
        if cmd == "tail" and (self.events < 1 or self.burn_in < 0):
            raise ParameterDomainError("tail needs events >= 1 and burn-in >= 0")
        if cmd == "drift" and (self.p not in (1, 2) or self.inner_reps < 1 or any(n < 0 for n in self.norms)):
            raise ParameterDomainError("drift needs p in {1, 2}, inner-reps >= 1 and non-negative norms")
        if cmd == "drift" and self.t_mult is not None and self.t_mult <= 0:
            raise ParameterDomainError("T-mult must be positive")
        if cmd == "fluid" and (any(k <= 0 for k in self.kappa_list) or self.points < 2):
            raise ParameterDomainError("fluid needs positive kappa values and at least 2 points")
        if cmd == "cycles" and self.n_max < 1:
            raise ParameterDomainError("n-max must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


class KsrsLab:
    """Routes a resolved RunConfig to its experiment and writes the artifacts."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.debug = cfg.debug or debug_enabled()

    def run(self) -> tuple[ExperimentResult, Path]:
        handler = getattr(self, f"_handle_{self.cfg.subcommand}")
        logger.info("running %s (seed=%s, threads=%d)", self.cfg.subcommand, self.cfg.seed, self.cfg.threads)
        result = handler()
        doc = self.cfg.to_json()
        result.threads = doc.pop("threads")
        result.config = doc
        path = write_result(result, Path(self.cfg.output_dir), self.cfg.run_name or self.cfg.subcommand)
        return result, path

    def _handle_params(self) -> ExperimentResult:
        return experiments.params_report(self.cfg.delta)

    def _handle_psi(self) -> ExperimentResult:
        return experiments.psi_table(self.cfg.delta, self.cfg.k_max)

    def _handle_simulate(self) -> ExperimentResult:
        c = self.cfg
        horizon = DEFAULT_SIM_HORIZON if c.horizon is None else c.horizon
        return experiments.simulate(c.delta, QState.parse(c.init), horizon, c.seed, c.policy, self.debug)

    def _handle_mm1(self) -> ExperimentResult:
        c = self.cfg
        epsilon = DEFAULT_MM1_EPSILON if c.epsilon is None else c.epsilon
        n = DEFAULT_MM1_N if c.n is None else c.n
        return experiments.mm1_emptying_oracle(n, c.mu, c.reps, c.seed, epsilon, c.threads)

    def _handle_ld(self) -> ExperimentResult:
        c = self.cfg
        epsilon = DEFAULT_LD_EPSILON if c.epsilon is None else c.epsilon
        return experiments.poisson_ld_check(c.nu, c.t_list, epsilon, c.reps, c.seed)

    def _handle_drain(self) -> ExperimentResult:
        c = self.cfg
        epsilon = DEFAULT_DRAIN_EPSILON if c.epsilon is None else c.epsilon
        n = DEFAULT_DRAIN_N if c.n is None else c.n
        return experiments.drain_experiment(c.delta, n, epsilon, c.reps, c.seed, c.horizon_mult, c.threads, self.debug)

    def _handle_holds(self) -> ExperimentResult:
        c = self.cfg
        epsilon = DEFAULT_WINDOW_EPSILON if c.epsilon is None else c.epsilon
        return experiments.hold_event_experiment(c.delta, c.x4_list, c.reps, c.seed, epsilon, c.threads, self.debug)

    def _handle_cascade(self) -> ExperimentResult:
        c = self.cfg
        epsilon = DEFAULT_WINDOW_EPSILON if c.epsilon is None else c.epsilon
        result = experiments.cascade_experiment(c.delta, c.x4, epsilon, c.reps, c.seed, c.stage, c.threads, self.debug)
        params = derive_params(c.delta)
        result.add("cascade_bound", experiments.cascade_bound_report(c.bound_n, c.alpha, c.delta))
        result.add("telescoped_gap", [telescoped_gap(n, params) for n in range(1, c.bound_n + 1)])
        return result

    def _handle_tail(self) -> ExperimentResult:
        c = self.cfg
        return experiments.tail_occupation(c.delta, c.events, c.burn_in, c.seed, self.debug)

    def _handle_drift(self) -> ExperimentResult:
        c = self.cfg
        t_mult = 4 * derive_params(c.delta).gamma4 if c.t_mult is None else c.t_mult
        states = [QState(0, 0, 0, n) for n in c.norms]
        return experiments.drift_estimate(c.delta, c.p, t_mult, states, c.inner_reps, c.seed, c.threads, self.debug)

    def _handle_fluid(self) -> ExperimentResult:
        c = self.cfg
        horizon = DEFAULT_FLUID_HORIZON if c.horizon is None else c.horizon
        x = QState.parse(c.init)
        return experiments.fluid_experiment(
            c.delta, c.kappa_list, c.reps, c.seed, x, horizon, c.points, c.threads, self.debug
        )

    def _handle_empty(self) -> ExperimentResult:
        c = self.cfg
        return experiments.empty_server_experiment(
            c.delta, QState.parse(c.init), c.reps, c.seed, c.c1, c.c2, c.threads, self.debug
        )

    def _handle_cycles(self) -> ExperimentResult:
        c = self.cfg
        return experiments.multicycle_experiment(c.delta, c.n_max, c.reps, c.seed, c.threads, self.debug)


def summary_line(result: ExperimentResult, path: Path) -> str:
    parts = [result.name]
    if result.regime:
        parts.append(f"regime={result.regime}")
    for key in HEADLINES.get(result.name, []):
        if key in result.estimates:
            value = result.estimates[key]
            text = f"{value:.6g}" if isinstance(value, float) else str(value)
            if key in result.stderr:
                text += f"±{result.stderr[key]:.2g}"
            parts.append(f"{key}={text}")
    if result.warnings:
        parts.append(f"warnings={len(result.warnings)}")
    parts.append(f"-> {path}")
    return " ".join(parts)


def _csv(kind):
    def parse(text: str) -> list:
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list: {text!r}") from exc
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--delta", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--reps", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--output-dir")
    common.add_argument("--run-name")
    common.add_argument("--log-level", choices=["error", "info", "debug"])
    common.add_argument("--config", help="JSON file whose fields mirror the flags")
    common.add_argument("--debug", action="store_true", default=None, help="engine invariant assertions")

    parser = argparse.ArgumentParser(prog="ksrs", description="KSRS network simulator and experiments")
    parser.add_argument("--version", action="version", version=VERSION)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text)

    add("params", "derived policy parameters as JSON")
    add("psi", "ψ table with the telescoping check").add_argument("--k-max", type=int)

    p = add("simulate", "one trajectory")
    p.add_argument("--init")
    p.add_argument("--horizon", type=float)
    p.add_argument("--policy", choices=["psi", "priority"])

    p = add("mm1", "plain M/M/1 emptying oracle")
    p.add_argument("--n", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--epsilon", type=float)

    p = add("ld", "Poisson deviation check")
    p.add_argument("--nu", type=float)
    p.add_argument("--t-list", type=_csv(float))
    p.add_argument("--epsilon", type=float)

    p = add("drain", "drain from (0,0,0,n)")
    p.add_argument("--n", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--horizon-mult", type=float)

    p = add("holds", "hold event versus the thinning oracle")
    p.add_argument("--x4-list", type=_csv(int))
    p.add_argument("--epsilon", type=float)

    p = add("cascade", "cascade window events")
    p.add_argument("--x4", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--stage", choices=["E4E1", "full"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--bound-n", type=int)

    p = add("tail", "long-run occupation and ccdf")
    p.add_argument("--events", type=int)
    p.add_argument("--burn-in", type=int)

    p = add("drift", "Lyapunov V_p estimates")
    p.add_argument("--p", type=int)
    p.add_argument("--t-mult", type=float)
    p.add_argument("--norms", type=_csv(int))
    p.add_argument("--inner-reps", type=int)

    p = add("fluid", "fluid scaling")
    p.add_argument("--kappa-list", type=_csv(float))
    p.add_argument("--init")
    p.add_argument("--horizon", type=float)
    p.add_argument("--points", type=int)

    p = add("empty", "time until one server empties")
    p.add_argument("--init")
    p.add_argument("--c1", type=float)
    p.add_argument("--c2", type=float)

    add("cycles", "consecutive full cycles from x*").add_argument("--n-max", type=int)
    return parser


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterDomainError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParameterDomainError("config file must hold a JSON object")
    doc.pop("subcommand", None)
    return doc


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION

    flags = vars(args)
    subcommand = flags.pop("subcommand")
    config_path = flags.pop("config", None)
    configure_logging(flags.get("log_level"))
    try:
        cfg = RunConfig.resolve(subcommand, _load_config_file(config_path), flags)
        configure_logging(cfg.log_level)
        cfg.validate()
        result, path = KsrsLab(cfg).run()
    except CapExceededError as exc:
        logger.error("%s", exc)
        return EXIT_CAP
    except (ParameterDomainError, UnsupportedTopologyError, RangeError) as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
    except KsrsError as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE
    print(summary_line(result, path))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(dispatch(sys.argv[1:]))
