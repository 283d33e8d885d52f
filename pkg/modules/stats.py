"""Mergeable accumulators and the interval estimates used by the experiments."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from config import CONFIDENCE_LEVEL, HIST_GEOM_RATIO, HIST_INT_BINS


def z_value(level: float = CONFIDENCE_LEVEL) -> float:
    return float(stats.norm.ppf(0.5 + level / 2))


@dataclass
class MeanAccumulator:
    """Count, sum and sum of squares. Merging is associative and commutative."""

    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0

    def add(self, x: float) -> None:
        self.count += 1
        self.total += x
        self.total_sq += x * x

    def extend(self, xs) -> None:
        for x in xs:
            self.add(x)

    def merge(self, other: MeanAccumulator) -> MeanAccumulator:
        return MeanAccumulator(
            self.count + other.count,
            self.total + other.total,
            self.total_sq + other.total_sq,
        )

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else math.nan

    @property
    def variance(self) -> float:
        if self.count < 2:
            return math.nan
        var = (self.total_sq - self.total * self.total / self.count) / (self.count - 1)
        return max(var, 0.0)

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count >= 2 else math.nan


def binomial_stderr(successes: int, total: int) -> float:
    if total == 0:
        return math.nan
    p = successes / total
    return math.sqrt(p * (1 - p) / total)


def proportion_interval(successes: int, total: int, level: float = CONFIDENCE_LEVEL) -> tuple[float, float]:
    """Clopper-Pearson interval; exact at the 0 and n boundaries."""
    alpha = 1 - level
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2, successes, total - successes + 1))
    hi = 1.0 if successes == total else float(stats.beta.ppf(1 - alpha / 2, successes + 1, total - successes))
    return lo, hi


def zero_count_upper_bound(total: int, level: float = CONFIDENCE_LEVEL) -> float:
    """One-sided upper confidence bound on p after 0 successes in `total` trials."""
    return 1.0 - (1.0 - level) ** (1.0 / total)


def ratio_estimate(numerators, denominators) -> tuple[float, float]:
    """Regenerative ratio ΣY/Στ with the delta-method standard error."""
    y = np.asarray(numerators, dtype=float)
    tau = np.asarray(denominators, dtype=float)
    n = len(tau)
    if n == 0 or tau.sum() <= 0:
        return math.nan, math.nan
    r = y.sum() / tau.sum()
    if n < 2:
        return float(r), math.nan
    resid = y - r * tau
    se = math.sqrt(resid.var(ddof=1) / n) / tau.mean()
    return float(r), float(se)


def lag1_autocorrelation(values) -> float:
    x = np.asarray(values, dtype=float)
    if len(x) < 3:
        return math.nan
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0:
        return 0.0
    return float(np.dot(x[:-1], x[1:]) / denom)


def combined_z(a: float, se_a: float, b: float, se_b: float) -> float:
    """|a - b| in units of the combined standard error."""
    se = math.hypot(se_a, se_b)
    if se == 0:
        return 0.0 if a == b else math.inf
    return abs(a - b) / se


_LOG_RATIO = math.log(HIST_GEOM_RATIO)


def bin_index(norm: int) -> int:
    if norm < HIST_INT_BINS:
        return norm
    return HIST_INT_BINS + int(math.log(norm / HIST_INT_BINS) / _LOG_RATIO)


def bin_lower_edge(index: int) -> int:
    if index < HIST_INT_BINS:
        return index
    return math.ceil(HIST_INT_BINS * HIST_GEOM_RATIO ** (index - HIST_INT_BINS))


@dataclass
class OccupationHistogram:
    """Time spent at each ‖q‖ level: integer bins, geometric bins above HIST_INT_BINS."""

    time_by_bin: Counter = field(default_factory=Counter)

    def add(self, norm: int, dt: float) -> None:
        self.time_by_bin[bin_index(norm)] += dt

    def merge(self, other: OccupationHistogram) -> OccupationHistogram:
        merged = Counter(self.time_by_bin)
        merged.update(other.time_by_bin)
        return OccupationHistogram(merged)

    @property
    def total_time(self) -> float:
        return math.fsum(self.time_by_bin.values())

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower edges, time fractions), sorted by level; fractions sum to 1."""
        if not self.time_by_bin:
            return np.zeros(0, dtype=int), np.zeros(0)
        idx = sorted(self.time_by_bin)
        times = np.array([self.time_by_bin[i] for i in idx])
        edges = np.array([bin_lower_edge(i) for i in idx])
        return edges, times / times.sum()

    def time_above(self, levels: np.ndarray) -> np.ndarray:
        """Time with ‖q‖ > s for each s; exact while s lies on the integer range."""
        if not self.time_by_bin:
            return np.zeros(len(levels))
        idx = np.array(sorted(self.time_by_bin))
        times = np.array([self.time_by_bin[i] for i in idx])
        edges = np.array([bin_lower_edge(i) for i in idx])
        suffix = np.cumsum(times[::-1])[::-1]
        pos = np.searchsorted(edges, np.asarray(levels), side="right")
        out = np.zeros(len(levels))
        inside = pos < len(edges)
        out[inside] = suffix[pos[inside]]
        return out
