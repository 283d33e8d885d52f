"""Ψ machinery, parameter derivation, and the randomized scheduling rules.

All Ψ/Ψ* arithmetic is done in log-space with natural logarithms. With
ln Ψ(s) = (ln s)^2 the quarter-power ratio collapses to

    ln Ψ*(s) = ((ln β1)^2 + 2 η ln β1 ln s) / 4

so ψ(n) = Ψ*(n)/Ψ*(n+1) and the hold-survival products have closed forms.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from config import CERTIFIED_DELTA_MAX, SECOND_MOMENT_EXPONENT
from modules.netmodel import InvariantViolation, ParameterDomainError, QState


@dataclass(frozen=True)
class PolicyParams:
    delta: float
    mu: float
    rho: float
    gamma2: float
    gamma4: float
    gamma24: float
    gamma: float
    beta1: float
    beta2: float
    eta: float
    c: float
    eta_condition_holds: bool
    second_moment_holds: bool

    @property
    def log_beta1(self) -> float:
        return math.log(self.beta1)

    @property
    def hold_exponent(self) -> float:
        """a = η ln β1 / 2, so that P(hold through k arrivals) = (k+1)^-a."""
        return self.eta * self.log_beta1 / 2

    @property
    def regime(self) -> str:
        if self.eta_condition_holds:
            return "certified"
        if self.second_moment_holds:
            return "second-moment"
        return "exploratory"

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["regime"] = self.regime
        doc["eta_threshold"] = eta_threshold(self.c)
        doc["certified_delta_max"] = CERTIFIED_DELTA_MAX
        return doc


def eta_threshold(c: float) -> float:
    """sqrt(12 / ln c), the lower bound on η required for summability."""
    return math.sqrt(12.0 / math.log(c))


def check_eta_condition(params: PolicyParams) -> bool:
    return params.eta > eta_threshold(params.c)


def derive_params(delta: float) -> PolicyParams:
    """All derived constants for μ2 = μ4 = 1 + δ."""
    if not delta > 0:
        raise ParameterDomainError(f"delta must be positive, got {delta}")
    if delta >= 0.5:
        bounds = ["beta1 <= 1"]
        if delta >= 1:
            bounds.append("rho <= 1/2")
        raise ParameterDomainError(
            f"delta={delta} outside (0, 1/2): {' and '.join(bounds)}"
        )

    mu = 1.0 + delta
    rho = 1.0 / mu
    gamma2 = gamma4 = 1.0 / delta
    gamma24 = gamma2 * gamma4
    beta1 = gamma24 / 4.0
    beta2 = 4.0 * gamma24
    eta = math.log(beta1) / math.log(beta2)
    partial = PolicyParams(
        delta=delta,
        mu=mu,
        rho=rho,
        gamma2=gamma2,
        gamma4=gamma4,
        gamma24=gamma24,
        gamma=gamma4 + gamma24,
        beta1=beta1,
        beta2=beta2,
        eta=eta,
        c=beta1,
        eta_condition_holds=False,
        second_moment_holds=eta * math.log(beta1) > SECOND_MOMENT_EXPONENT,
    )
    return PolicyParams(**{**asdict(partial), "eta_condition_holds": check_eta_condition(partial)})


def log_big_psi(s: float) -> float:
    if s <= 0:
        return -math.inf
    return math.log(s) ** 2


def big_psi(s: float) -> float:
    """Ψ(s) = s^(ln s) = exp((ln s)^2), Ψ(0) = 0."""
    if s < 0:
        raise ParameterDomainError(f"Psi is defined for s >= 0, got {s}")
    if s == 0:
        return 0.0
    return math.exp(log_big_psi(s))


def log_psi_star(s: float, params: PolicyParams) -> float:
    if s < 1:
        raise ParameterDomainError(f"Psi* is defined for s >= 1, got {s}")
    lb = params.log_beta1
    return (lb * lb + 2.0 * params.eta * lb * math.log(s)) / 4.0


def psi_star(s: float, params: PolicyParams) -> float:
    """Ψ*(s) = (Ψ(β1 s^η) / Ψ(s^η))^(1/4)."""
    return math.exp(log_psi_star(s, params))


def log_psi_seq(n: int, params: PolicyParams) -> float:
    return -params.hold_exponent * math.log1p(1.0 / n)


def psi_seq(n: int, params: PolicyParams) -> float:
    """ψ(n) = Ψ*(n)/Ψ*(n+1), the probability of holding at the n-th arrival."""
    if n < 1:
        raise ParameterDomainError(f"psi(n) needs n >= 1, got {n}")
    return math.exp(log_psi_seq(n, params))


def hold_survival(k: int, params: PolicyParams) -> float:
    """∏_{i<=k} ψ(i) = Ψ*(1)/Ψ*(k+1) = (k+1)^-a."""
    if k < 0:
        raise ParameterDomainError(f"hold_survival needs k >= 0, got {k}")
    if k == 0:
        return 1.0
    return math.exp(-params.hold_exponent * math.log(k + 1))


def summability_partial(params: PolicyParams, m_max: int) -> np.ndarray:
    """Partial sums of Σ m^2 (Ψ(m^η)/Ψ(c m^η))^(1/4) for M = 1..m_max."""
    if m_max < 1:
        raise ParameterDomainError(f"m_max must be >= 1, got {m_max}")
    m = np.arange(1, m_max + 1, dtype=float)
    lc = math.log(params.c)
    log_terms = 2.0 * np.log(m) - (lc * lc + 2.0 * params.eta * lc * np.log(m)) / 4.0
    return np.cumsum(np.exp(log_terms))


def hold_count_pmf(k_max: int, params: PolicyParams) -> np.ndarray:
    """P(X = k) = (1 - ψ(k)) ∏_{i<k} ψ(i) for k = 1..k_max.

    X is the buffer-1 content at the first flush while buffer 4 stays busy.
    """
    if k_max < 1:
        raise ParameterDomainError(f"k_max must be >= 1, got {k_max}")
    k = np.arange(1, k_max + 1, dtype=float)
    a = params.hold_exponent
    log_survive_before = -a * np.log(k)  # ∏_{i<k} ψ(i) = k^-a
    log_psi = -a * np.log1p(1.0 / k)
    return -np.expm1(log_psi) * np.exp(log_survive_before)


def hold_count_moment(r: int, params: PolicyParams, k_max: int = 10**5) -> tuple[float, bool]:
    """Truncated E[X^r] and whether the full moment is finite (a > r)."""
    pmf = hold_count_pmf(k_max, params)
    k = np.arange(1, k_max + 1, dtype=float)
    return float(np.sum(k**r * pmf)), params.hold_exponent > r


class PolicyAction(Enum):
    SERVE_FINITE = "ServeFinite"
    FLUSH_BUFFER1 = "FlushBuffer1"
    FLUSH_BUFFER3 = "FlushBuffer3"
    HOLD = "Hold"


def flush1_enabled(q1: int, q2: int, q4: int) -> bool:
    return q1 > 0 and (q4 == 0 or q2 > 0)


def flush3_enabled(q2: int, q3: int, q4: int) -> bool:
    return q3 > 0 and (q2 == 0 or q4 > 0)


def randomized_region(buffer: int, q2: int, q4: int) -> bool:
    """An arrival to `buffer` may hold: its partner exit buffer is empty while the other is busy."""
    if buffer == 1:
        return q4 > 0 and q2 == 0
    if buffer == 3:
        return q2 > 0 and q4 == 0
    raise ParameterDomainError(f"arrivals enter buffers 1 and 3, got {buffer}")


def _flush1_enabled(q: QState) -> bool:
    return flush1_enabled(q.q1, q.q2, q.q4)


def _flush3_enabled(q: QState) -> bool:
    return flush3_enabled(q.q2, q.q3, q.q4)


def rule_action(state: QState) -> PolicyAction:
    """Flush or serve at a non-randomized epoch, buffer 1 checked first."""
    if _flush1_enabled(state):
        return PolicyAction.FLUSH_BUFFER1
    if _flush3_enabled(state):
        return PolicyAction.FLUSH_BUFFER3
    return PolicyAction.SERVE_FINITE


def apply_action(state: QState, action: PolicyAction) -> QState:
    q1, q2, q3, q4 = state
    if action is PolicyAction.FLUSH_BUFFER1:
        return QState(0, q2 + q1, q3, q4)
    if action is PolicyAction.FLUSH_BUFFER3:
        return QState(q1, q2, 0, q4 + q3)
    return state


def flush_closure(state: QState, strict: bool = False) -> QState:
    """Apply the flush rules until neither buffer 1 nor buffer 3 can flush.

    With strict=True a state where both flushes are enabled at once raises
    InvariantViolation; stable dynamics never produce one.
    """
    state = QState(*state)
    if strict and _flush1_enabled(state) and _flush3_enabled(state):
        raise InvariantViolation("both flushes enabled", tuple(state))
    while (action := rule_action(state)) is not PolicyAction.SERVE_FINITE:
        state = apply_action(state, action)
    return state


def arrival_is_randomized(buffer: int, state: QState) -> bool:
    """The post-arrival state lies in the randomized region."""
    q1, q2, q3, q4 = state
    arrived = q1 if buffer == 1 else q3
    return randomized_region(buffer, q2, q4) and arrived > 0


def decide_arrival(
    buffer: int, state: QState, u: float | None, params: PolicyParams
) -> PolicyAction:
    """Randomized hold-or-flush at an arrival epoch; the plain flush rules otherwise.

    `state` already counts the arriving job. `u` is only read when the
    randomized branch is reached; Hold means the partner finite buffer keeps
    the server.
    """
    state = QState(*state)
    if arrival_is_randomized(buffer, state):
        if u is None:
            raise ParameterDomainError("randomized branch reached without a uniform draw")
        m = state.q1 if buffer == 1 else state.q3
        if u < psi_seq(m, params):
            return PolicyAction.HOLD
        return PolicyAction.FLUSH_BUFFER1 if buffer == 1 else PolicyAction.FLUSH_BUFFER3
    action = rule_action(state)
    if action is PolicyAction.SERVE_FINITE:
        return PolicyAction.HOLD
    return action


class PsiPolicy:
    """The randomized policy ψ, in the integer form the engine calls per event."""

    kind = "psi"
    asserts_stability = True

    def __init__(self, params: PolicyParams):
        self.params = params
        self._psi: list[float] = [0.0]

    def psi(self, n: int) -> float:
        cache = self._psi
        if n >= len(cache):
            a = self.params.hold_exponent
            cache.extend(math.exp(-a * math.log1p(1.0 / i)) for i in range(len(cache), 2 * n + 16))
        return cache[n]

    def randomized(self, buffer: int, q1: int, q2: int, q3: int, q4: int) -> bool:
        return randomized_region(buffer, q2, q4)

    def closure(self, q1: int, q2: int, q3: int, q4: int) -> tuple[int, int, int, int, int, int, bool]:
        """Returns (q1, q2, q3, q4, flushed1, flushed3, both_enabled)."""
        both = flush1_enabled(q1, q2, q4) and flush3_enabled(q2, q3, q4)
        f1 = f3 = 0
        while True:
            if flush1_enabled(q1, q2, q4):
                q2 += q1
                f1 += q1
                q1 = 0
            elif flush3_enabled(q2, q3, q4):
                q4 += q3
                f3 += q3
                q3 = 0
            else:
                return q1, q2, q3, q4, f1, f3, both


class PriorityPolicy(PsiPolicy):
    """Fixed priority to buffer 4 at server 1 and buffer 3 at server 2.

    Buffer 3 never holds a job and buffer 4 is an M/M/1 queue for all time,
    so the stability predicate of ψ does not apply.
    """

    kind = "priority"
    asserts_stability = False

    def randomized(self, buffer: int, q1: int, q2: int, q3: int, q4: int) -> bool:
        return False

    def closure(self, q1, q2, q3, q4):
        f1 = f3 = 0
        if q3 > 0:
            q4 += q3
            f3 = q3
            q3 = 0
        if q1 > 0 and q4 == 0:
            q2 += q1
            f1 = q1
            q1 = 0
        return q1, q2, q3, q4, f1, f3, False


def make_policy(kind: str, params: PolicyParams) -> PsiPolicy:
    if kind == "psi":
        return PsiPolicy(params)
    if kind == "priority":
        return PriorityPolicy(params)
    raise ParameterDomainError(f"unknown policy kind {kind!r}")
