import math

import numpy as np
import pytest

from config import HIST_INT_BINS
from modules.stats import (
    MeanAccumulator,
    OccupationHistogram,
    bin_index,
    bin_lower_edge,
    binomial_stderr,
    combined_z,
    lag1_autocorrelation,
    proportion_interval,
    ratio_estimate,
    z_value,
    zero_count_upper_bound,
)


def test_mean_accumulator_merge_matches_extend() -> None:
    xs = [1.0, 4.0, 2.5, 7.0, 3.0, 0.5]
    whole = MeanAccumulator()
    whole.extend(xs)
    left, right = MeanAccumulator(), MeanAccumulator()
    left.extend(xs[:2])
    right.extend(xs[2:])
    merged = left.merge(right)
    assert merged.mean == pytest.approx(whole.mean)
    assert merged.variance == pytest.approx(whole.variance)
    assert whole.variance == pytest.approx(np.var(xs, ddof=1))
    assert whole.stderr == pytest.approx(math.sqrt(np.var(xs, ddof=1) / len(xs)))


def test_empty_accumulator_is_nan() -> None:
    acc = MeanAccumulator()
    assert math.isnan(acc.mean)
    acc.add(1.0)
    assert math.isnan(acc.stderr)


def test_proportion_interval_boundaries() -> None:
    lo, hi = proportion_interval(0, 50)
    assert lo == 0.0 and 0 < hi < 0.1
    lo, hi = proportion_interval(50, 50)
    assert hi == 1.0 and lo > 0.9
    lo, hi = proportion_interval(20, 50)
    assert lo < 0.4 < hi


def test_zero_count_upper_bound() -> None:
    assert zero_count_upper_bound(100) == pytest.approx(1 - 0.05 ** 0.01)
    assert zero_count_upper_bound(300) < 0.01


def test_binomial_stderr_and_z() -> None:
    assert binomial_stderr(25, 100) == pytest.approx(math.sqrt(0.25 * 0.75 / 100))
    assert math.isnan(binomial_stderr(0, 0))
    assert z_value(0.95) == pytest.approx(1.959964, rel=1e-5)
    assert combined_z(1.0, 0.3, 1.0, 0.4) == 0.0
    assert combined_z(2.0, 0.3, 1.0, 0.4) == pytest.approx(2.0)


def test_ratio_estimate() -> None:
    r, se = ratio_estimate([2.0, 4.0, 6.0], [1.0, 2.0, 3.0])
    assert r == pytest.approx(2.0)
    assert se == pytest.approx(0.0, abs=1e-12)
    r, se = ratio_estimate([], [])
    assert math.isnan(r)


def test_lag1_autocorrelation_sign() -> None:
    assert lag1_autocorrelation([1, -1, 1, -1, 1, -1]) < 0
    assert lag1_autocorrelation([1, 2, 3, 4, 5, 6]) > 0
    assert math.isnan(lag1_autocorrelation([1, 2]))


def test_bins_are_exact_on_integer_range() -> None:
    for n in (0, 1, 17, HIST_INT_BINS - 1):
        assert bin_index(n) == n
        assert bin_lower_edge(n) == n
    assert bin_index(HIST_INT_BINS) == HIST_INT_BINS
    assert bin_index(10 * HIST_INT_BINS) > bin_index(2 * HIST_INT_BINS) > HIST_INT_BINS


def test_occupation_histogram() -> None:
    hist = OccupationHistogram()
    hist.add(0, 1.0)
    hist.add(2, 3.0)
    edges, weights = hist.weights()
    assert edges.tolist() == [0, 2]
    assert weights.tolist() == pytest.approx([0.25, 0.75])
    assert hist.time_above(np.array([0, 1, 2])).tolist() == pytest.approx([3.0, 3.0, 0.0])
    other = OccupationHistogram()
    other.add(2, 1.0)
    assert hist.merge(other).total_time == pytest.approx(5.0)
    assert hist.total_time == pytest.approx(4.0)
