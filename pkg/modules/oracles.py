"""Reference quantities that share no code path with the engine.

Plain M/M/1 emptying samplers, Poisson deviation sampling, the cascade
lower-bound product (log-space and mpmath direct) and the deterministic
V_p sandwich.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from modules.netmodel import ParameterDomainError
from modules.policy import PolicyParams, hold_survival
from modules.rng import RngStream, mix_key

DIRECT_DPS = 60


def mm1_emptying_time(n: int, mu: float, rng: RngStream) -> float:
    """Time for an M/M/1 queue (arrival rate 1, service mu) started with n jobs to empty."""
    q = n
    t = 0.0
    p_service = mu / (1.0 + mu)
    while q > 0:
        t += rng.exponential(1.0 + mu)
        if rng.uniform() < p_service:
            q -= 1
        else:
            q += 1
    return t


def mm1_thinning_sample(x4: int, mu: float, rng: RngStream) -> tuple[float, int]:
    """(T, A1): emptying time of buffer 4 and the independent buffer-1 arrivals before it.

    Buffer 4 is fed at rate 1 and served at rate mu; buffer 1 receives its
    own rate-1 Poisson stream. All three clocks compete.
    """
    q = x4
    t = 0.0
    a1 = 0
    total = 2.0 + mu
    while q > 0:
        t += rng.exponential(total)
        pick = rng.uniform() * total
        if pick < mu:
            q -= 1
        elif pick < mu + 1.0:
            q += 1
        else:
            a1 += 1
    return t, a1


def thinning_weight(a1: int, params: PolicyParams) -> float:
    """P(every one of a1 buffer-1 arrivals was held) = ∏_{i<=a1} ψ(i)."""
    return hold_survival(a1, params)


def mm1_emptying_variance(n: int, mu: float) -> float:
    """Var of the emptying time: n busy periods, each with variance (mu+1)/(mu-1)^3."""
    return n * (mu + 1.0) / (mu - 1.0) ** 3


def poisson_counts(nu: float, t: float, reps: int, seed: int, stream_id: int, index: int = 0) -> np.ndarray:
    gen = np.random.Generator(np.random.PCG64(mix_key(seed, stream_id, index)))
    return gen.poisson(nu * t, size=reps)


def poisson_chernoff_rate(nu: float, epsilon: float) -> float:
    """Exponential decay rate of P(|N(t) - νt| > εt) in t (the smaller one-sided rate)."""
    x = epsilon / nu
    upper = nu * ((1 + x) * math.log1p(x) - x)
    if x >= 1:
        return upper
    lower = nu * ((1 - x) * math.log1p(-x) + x)
    return min(upper, lower)


@dataclass(frozen=True)
class CascadeBound:
    n: int
    alpha: float
    log_bound: float
    log_bound_closed: float
    ratio_delta: float
    log_time_threshold: float

    @property
    def bound(self) -> float:
        return math.exp(self.log_bound)

    @property
    def time_threshold(self) -> float:
        """β1^n, the time scale of the n-th cascade."""
        return math.exp(self.log_time_threshold)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "alpha": self.alpha,
            "log_bound": self.log_bound,
            "log_bound_closed": self.log_bound_closed,
            "bound": self.bound,
            "ratio_delta": self.ratio_delta,
            "log_time_threshold": self.log_time_threshold,
        }


def ratio_delta(params: PolicyParams) -> float:
    """γ24/(2γ) (1 - 4/γ24): sup-ratio level reached after each completed cascade."""
    return params.gamma24 / (2 * params.gamma) * (1 - 4 / params.gamma24)


def cascade_bound(n: int, alpha: float, params: PolicyParams) -> CascadeBound:
    """α^n ∏_{m=1..n} Ψ*(β2^(m+1))^-2, in log-space."""
    if n < 1:
        raise ParameterDomainError(f"cascade_bound needs n >= 1, got {n}")
    if not 0 < alpha <= 1:
        raise ParameterDomainError(f"alpha must lie in (0, 1], got {alpha}")
    log_beta2 = math.log(params.beta2)
    lb = params.log_beta1
    log_bound = n * math.log(alpha)
    log_closed = n * math.log(alpha)
    for m in range(1, n + 1):
        # Ψ*(β2^(m+1)) through its log argument; β2^(m+1) overflows for large m
        log_s = (m + 1) * log_beta2
        log_bound -= 2.0 * (lb * lb + 2.0 * params.eta * lb * log_s) / 4.0
        log_closed -= (lb * lb + 2.0 * params.eta * (m + 1) * lb * log_beta2) / 2.0
    return CascadeBound(
        n=n,
        alpha=alpha,
        log_bound=log_bound,
        log_bound_closed=log_closed,
        ratio_delta=ratio_delta(params),
        log_time_threshold=n * lb,
    )


def _mp_big_psi(s):
    return mpmath.power(s, mpmath.log(s))


def mp_psi_star(s, params: PolicyParams):
    """(Ψ(β1 s^η)/Ψ(s^η))^(1/4) evaluated directly at high precision."""
    with mpmath.workdps(DIRECT_DPS):
        s_eta = mpmath.power(mpmath.mpf(s), mpmath.mpf(params.eta))
        ratio = _mp_big_psi(mpmath.mpf(params.beta1) * s_eta) / _mp_big_psi(s_eta)
        return mpmath.root(ratio, 4)


def cascade_bound_direct(n: int, alpha: float, params: PolicyParams) -> float:
    """Natural log of the cascade product evaluated factor by factor with mpmath."""
    with mpmath.workdps(DIRECT_DPS):
        product = mpmath.power(mpmath.mpf(alpha), n)
        beta2 = mpmath.mpf(params.beta2)
        for m in range(1, n + 1):
            product /= mp_psi_star(mpmath.power(beta2, m + 1), params) ** 2
        return float(mpmath.log(product))


def telescoped_gap(n: int, params: PolicyParams, direct: bool = False) -> float:
    """ln Ψ^(1/2)(β1^(n+2)) - ln ∏_{m<=n} Ψ*(β2^(m+1))^2; positive when the inequality holds."""
    if direct:
        with mpmath.workdps(DIRECT_DPS):
            beta1 = mpmath.mpf(params.beta1)
            beta2 = mpmath.mpf(params.beta2)
            lhs = mpmath.mpf(0)
            for m in range(1, n + 1):
                lhs += 2 * mpmath.log(mp_psi_star(mpmath.power(beta2, m + 1), params))
            rhs = mpmath.log(_mp_big_psi(mpmath.power(beta1, n + 2))) / 2
            return float(rhs - lhs)
    lb = params.log_beta1
    log_beta2 = math.log(params.beta2)
    lhs = sum(2.0 * (lb * lb + 2.0 * params.eta * lb * (m + 1) * log_beta2) / 4.0 for m in range(1, n + 1))
    rhs = 0.5 * ((n + 2) * lb) ** 2
    return rhs - lhs


def vp_horizon(norm: int, t_mult: float) -> int:
    return int(math.floor(norm * t_mult))


def vp_sandwich(norm: int, p: int, t_mult: float) -> tuple[float, float]:
    """Skip-free bounds Σ_{t<=H} ((n-t)+)^p <= V_p <= Σ_{t<=H} (n+t)^p with H = ⌊nT⌋."""
    if norm < 0 or p < 1 or t_mult <= 0:
        raise ParameterDomainError(f"vp_sandwich needs norm >= 0, p >= 1, T > 0; got {norm}, {p}, {t_mult}")
    t = np.arange(vp_horizon(norm, t_mult) + 1, dtype=float)
    lower = float(np.sum(np.maximum(norm - t, 0.0) ** p))
    upper = float(np.sum((norm + t) ** p))
    return lower, upper
