"""Network description for the four-buffer KSRS network: rates, constituency, routing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, NamedTuple

import numpy as np

from config import ARRIVAL_RATE, N_BUFFERS

if TYPE_CHECKING:
    from modules.policy import PolicyParams


class KsrsError(Exception):
    """Base class for every error raised by this package."""


class ParameterDomainError(KsrsError, ValueError):
    pass


class UnsupportedTopologyError(KsrsError):
    pass


class RangeError(KsrsError, ValueError):
    pass


class CapExceededError(KsrsError):
    """Event cap reached before the run finished. `partial` holds what was collected."""

    def __init__(self, message: str, cap: int, partial: Any = None):
        super().__init__(message)
        self.cap = cap
        self.partial = partial


class InvariantViolation(KsrsError, AssertionError):
    def __init__(self, message: str, *states: tuple):
        super().__init__(f"{message}: {states}" if states else message)
        self.states = states


@dataclass(frozen=True)
class ServiceRate:
    """A finite positive rate, or infinite (instant flush)."""

    rate: float = math.inf

    def __post_init__(self):
        if not self.rate > 0:
            raise ParameterDomainError(f"service rate must be positive, got {self.rate}")

    @classmethod
    def finite(cls, rate: float) -> ServiceRate:
        if math.isinf(rate):
            raise ParameterDomainError("finite service rate cannot be infinite")
        return cls(float(rate))

    @classmethod
    def infinite(cls) -> ServiceRate:
        return cls(math.inf)

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.rate)

    def load(self, arrival_rate: float) -> float:
        """Offered load λ/μ; an infinite rate contributes nothing."""
        return 0.0 if self.is_infinite else arrival_rate / self.rate

    def to_json(self) -> float | str:
        return "inf" if self.is_infinite else self.rate

    @classmethod
    def from_json(cls, value: float | str) -> ServiceRate:
        if isinstance(value, str) and value.strip().lower() == "inf":
            return cls.infinite()
        return cls.finite(float(value))


class QState(NamedTuple):
    """Buffer contents (q1, q2, q3, q4). Buffers are 1-based in all output."""

    q1: int
    q2: int
    q3: int
    q4: int

    @property
    def norm(self) -> int:
        return self.q1 + self.q2 + self.q3 + self.q4

    def is_stable(self) -> bool:
        """q1>0 needs q4>0 and q2=0; q3>0 needs q2>0 and q4=0."""
        if self.q1 > 0 and not (self.q4 > 0 and self.q2 == 0):
            return False
        if self.q3 > 0 and not (self.q2 > 0 and self.q4 == 0):
            return False
        return True

    @classmethod
    def parse(cls, text: str) -> QState:
        """Parse '0,0,0,1' (the CLI --init form)."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != N_BUFFERS:
            raise ParameterDomainError(f"state needs {N_BUFFERS} entries, got {text!r}")
        try:
            values = [int(p) for p in parts]
        except ValueError as exc:
            raise ParameterDomainError(f"state entries must be integers, got {text!r}") from exc
        if any(v < 0 for v in values):
            raise ParameterDomainError(f"state entries must be non-negative, got {text!r}")
        return cls(*values)


@dataclass(frozen=True)
class NetworkSpec:
    """λ, μ, constituency C (server x class) and routing R (class x class)."""

    arrival_rates: tuple[float, ...]
    service_rates: tuple[ServiceRate, ...]
    constituency: tuple[tuple[int, ...], ...]
    routing: tuple[tuple[int, ...], ...]

    @property
    def n_classes(self) -> int:
        return len(self.arrival_rates)

    @property
    def n_servers(self) -> int:
        return len(self.constituency)

    def exit_buffers(self) -> list[int]:
        """1-based indices of buffers whose routing row is all zero."""
        return [i + 1 for i, row in enumerate(self.routing) if not any(row)]

    def mu(self, buffer: int) -> float:
        """Service rate of a 1-based buffer."""
        return self.service_rates[buffer - 1].rate

    def to_json(self) -> dict:
        return {
            "lambda": list(self.arrival_rates),
            "mu": [r.to_json() for r in self.service_rates],
            "C": [list(row) for row in self.constituency],
            "R": [list(row) for row in self.routing],
        }

    @classmethod
    def from_json(cls, doc: dict) -> NetworkSpec:
        return cls(
            arrival_rates=tuple(float(v) for v in doc["lambda"]),
            service_rates=tuple(ServiceRate.from_json(v) for v in doc["mu"]),
            constituency=tuple(tuple(int(v) for v in row) for row in doc["C"]),
            routing=tuple(tuple(int(v) for v in row) for row in doc["R"]),
        )


KSRS_CONSTITUENCY = ((1, 0, 0, 1), (0, 1, 1, 0))
KSRS_ROUTING = ((0, 1, 0, 0), (0, 0, 0, 0), (0, 0, 0, 1), (0, 0, 0, 0))


def build_ksrs(params: PolicyParams) -> NetworkSpec:
    """The symmetric KSRS instance: λ1=λ3=1, μ1=μ3=∞, μ2=μ4=params.mu."""
    finite = ServiceRate.finite(params.mu)
    return NetworkSpec(
        arrival_rates=(ARRIVAL_RATE, 0.0, ARRIVAL_RATE, 0.0),
        service_rates=(ServiceRate.infinite(), finite, ServiceRate.infinite(), finite),
        constituency=KSRS_CONSTITUENCY,
        routing=KSRS_ROUTING,
    )


def _int_matrix(rows, width: int) -> np.ndarray | None:
    """Integer matrix with `width` columns, or None for ragged or non-integer rows."""
    try:
        if any(len(row) != width for row in rows):
            return None
        return np.asarray(rows, dtype=int).reshape(len(rows), width)
    except (TypeError, ValueError):
        return None


def validate_network(spec: NetworkSpec) -> list[str]:
    """Return the list of violated invariants. Empty means valid."""
    violations: list[str] = []
    n = spec.n_classes

    if len(spec.service_rates) != n:
        violations.append("service rate count does not match class count")
    if any(not (lam >= 0) for lam in spec.arrival_rates):
        violations.append("arrival rates must be non-negative")

    C = _int_matrix(spec.constituency, n)
    R = _int_matrix(spec.routing, n)
    if C is None or C.ndim != 2:
        violations.append("constituency must be servers x classes")
    else:
        if not np.isin(C, (0, 1)).all():
            violations.append("constituency entries must be 0 or 1")
        col_sums = C.sum(axis=0)
        if (col_sums > 1).any():
            violations.append("class multiply assigned")
        if (col_sums == 0).any():
            violations.append("class not assigned to any server")

    if R is None or R.shape != (n, n):
        violations.append("routing must be classes x classes")
        return violations
    if not np.isin(R, (0, 1)).all():
        violations.append("routing entries must be 0 or 1")
    if (R.sum(axis=1) > 1).any():
        violations.append("routing row has more than one successor")
    if np.linalg.matrix_power(R, n).any():
        violations.append("routing is not nilpotent (network is not open)")

    for i in spec.exit_buffers():
        if i <= len(spec.service_rates) and spec.service_rates[i - 1].is_infinite:
            violations.append(f"exit buffer must have finite rate (buffer {i})")
    return violations


def is_ksrs(spec: NetworkSpec) -> bool:
    if spec.n_classes != N_BUFFERS or spec.n_servers != 2:
        return False
    if spec.constituency != KSRS_CONSTITUENCY or spec.routing != KSRS_ROUTING:
        return False
    lam = spec.arrival_rates
    if lam[1] != 0 or lam[3] != 0 or lam[0] != ARRIVAL_RATE or lam[2] != ARRIVAL_RATE:
        return False
    mu = spec.service_rates
    return (
        mu[0].is_infinite
        and mu[2].is_infinite
        and not mu[1].is_infinite
        and mu[1].rate == mu[3].rate
    )


def require_ksrs(spec: NetworkSpec) -> None:
    if not is_ksrs(spec):
        raise UnsupportedTopologyError(
            "only the symmetric KSRS topology is supported by the engine and policy"
        )


def traffic_intensities(spec: NetworkSpec) -> tuple[float, float]:
    """(ρ1, ρ2) = (λ1/μ1 + λ3/μ4, λ1/μ2 + λ3/μ3), which reduce to (1/μ4, 1/μ2)."""
    require_ksrs(spec)
    lam = spec.arrival_rates
    mu = spec.service_rates
    rho1 = mu[0].load(lam[0]) + mu[3].load(lam[2])
    rho2 = mu[1].load(lam[0]) + mu[2].load(lam[2])
    return rho1, rho2
