import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcdtt.core import (
    MEDIAN_INDEX,
    PERCENTILES,
    DistributionError,
    PercentileDistribution,
    build_cdf,
    pool_percentiles,
    quantile_of,
    sample,
    summarize,
    truncated_sample,
)

LINEAR = np.linspace(50.0, 140.0, 19)


@st.composite
def distributions(draw, strict=False):
    start = draw(st.floats(0.5, 200.0))
    lo = 0.01 if strict else 0.0
    steps = draw(st.lists(st.floats(lo, 30.0), min_size=18, max_size=18))
    return start + np.concatenate([[0.0], np.cumsum(steps)])


def test_percentile_levels():
    assert PERCENTILES.size == 19
    assert PERCENTILES[0] == 0.05 and PERCENTILES[-1] == 0.95
    assert np.allclose(np.diff(PERCENTILES), 0.05)
    assert PERCENTILES[MEDIAN_INDEX] == 0.5


@pytest.mark.parametrize("values, match", [
    (np.ones(18), "19"),
    (np.r_[np.ones(10), np.nan, np.ones(8)], "index 10"),
    (np.r_[np.arange(1.0, 11.0), np.arange(1.0, 10.0)], "index 10"),
    (np.r_[0.0, np.ones(18)], "index 0"),
])
def test_distribution_validation(values, match):
    with pytest.raises(DistributionError, match=match):
        PercentileDistribution(values)


def test_constant_cdf():
    cdf = build_cdf(PercentileDistribution(np.full(19, 80.0)))
    assert cdf.is_degenerate
    assert sample(cdf, 0.37) == 80.0
    assert np.all(cdf.ppf(np.linspace(0, 1, 11)) == 80.0)
    assert quantile_of(cdf, 80.0) == pytest.approx(0.5)


def test_linear_cdf_examples():
    cdf = build_cdf(PercentileDistribution(LINEAR))
    assert sample(cdf, 0.5) == pytest.approx(95.0)
    assert sample(cdf, 0.05) == 50.0
    assert sample(cdf, 0.95) == 140.0
    assert quantile_of(cdf, 95.0) == pytest.approx(0.5)
    assert quantile_of(cdf, 10.0) == 0.0
    assert quantile_of(cdf, 500.0) == 1.0
    assert truncated_sample(cdf, 0.4, 0.6, 0.5) == pytest.approx(95.0)


def test_tails_are_clamped():
    cdf = build_cdf(PercentileDistribution(LINEAR))
    assert sample(cdf, 0.0) == 50.0 and sample(cdf, 0.01) == 50.0
    assert sample(cdf, 1.0) == 140.0
    with pytest.raises(DistributionError):
        sample(cdf, 1.5)
    with pytest.raises(DistributionError):
        sample(cdf, -0.1)


@settings(max_examples=200, deadline=None)
@given(distributions())
def test_round_trip_exact(values):
    dist = PercentileDistribution(values)
    cdf = build_cdf(dist)
    np.testing.assert_array_equal(cdf.ppf(PERCENTILES), dist.values)


@settings(max_examples=200, deadline=None)
@given(distributions(strict=True), st.floats(0.05, 0.95))
def test_quantile_inverts_sample(values, u):
    cdf = build_cdf(PercentileDistribution(values))
    assert quantile_of(cdf, sample(cdf, u)) == pytest.approx(u, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(distributions(), st.lists(st.floats(0.0, 1.0), min_size=2, max_size=50))
def test_ppf_monotone(values, us):
    cdf = build_cdf(PercentileDistribution(values))
    us = np.sort(us)
    assert np.all(np.diff(cdf.ppf(us)) >= 0)


def test_flat_segment_tie_break():
    vals = np.r_[np.arange(1.0, 8.0), np.full(5, 10.0), np.arange(11.0, 18.0)]
    cdf = build_cdf(PercentileDistribution(vals))
    # 10 spans p40..p60
    assert quantile_of(cdf, 10.0) == pytest.approx(0.5)


def test_full_window_is_plain_sample():
    cdf = build_cdf(PercentileDistribution(LINEAR))
    u = np.random.default_rng(3).random(1000)
    np.testing.assert_array_equal(truncated_sample(cdf, 0.0, 1.0, u), sample(cdf, u))


@settings(max_examples=100, deadline=None)
@given(distributions(), st.floats(0.0, 0.98), st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_truncated_within_window(values, lo, width, u):
    hi = min(1.0, lo + width)
    cdf = build_cdf(PercentileDistribution(values))
    v = truncated_sample(cdf, lo, hi, u)
    assert cdf.ppf(lo) <= v <= cdf.ppf(hi)


def test_truncated_bad_window():
    cdf = build_cdf(PercentileDistribution(LINEAR))
    with pytest.raises(DistributionError):
        truncated_sample(cdf, 0.6, 0.4, 0.5)
    with pytest.raises(DistributionError):
        truncated_sample(cdf, -0.1, 0.4, 0.5)


def test_monte_carlo_matches_percentiles():
    values = np.array([40, 52, 60, 66, 70, 73, 76, 78, 80, 82, 84, 86, 88, 91, 94, 98, 103, 110, 125.0])
    cdf = build_cdf(PercentileDistribution(values))
    draws = sample(cdf, np.random.default_rng(0).random(1_000_000))
    emp = np.percentile(draws, PERCENTILES * 100)
    np.testing.assert_allclose(emp, values, rtol=0.005)


def test_analytic_mean():
    cdf = build_cdf(PercentileDistribution(LINEAR))
    draws = sample(cdf, (np.arange(200_000) + 0.5) / 200_000)
    assert cdf.mean() == pytest.approx(draws.mean(), rel=1e-6)


def test_summarize_examples():
    s = summarize([10, 10, 10])
    assert s.mean == 10 and s.std == 0 and s.count == 3
    assert summarize([1, 2, 3, 4]).mean == 2.5
    with pytest.raises(DistributionError):
        summarize([])


def test_summarize_uniform_percentiles():
    s = summarize(np.random.default_rng(1).random(10_000))
    np.testing.assert_allclose(s.percentiles.values, PERCENTILES, atol=0.02)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200))
def test_summarize_bounds(xs):
    s = summarize(xs)
    assert min(xs) <= s.mean <= max(xs)
    assert np.all(np.diff(s.percentiles.values) >= 0)


def test_pool_single_source_identity():
    d = PercentileDistribution(LINEAR)
    assert pool_percentiles([d], [7]) is d


def test_pool_oracle():
    a = PercentileDistribution(np.linspace(50, 60, 19))
    b = PercentileDistribution(np.linspace(90, 120, 19))
    pooled = pool_percentiles([a, b], [1, 3])
    # explicit merge: 250 stratified draws from a, 750 from b
    ua, ub = (np.arange(250) + 0.5) / 250, (np.arange(750) + 0.5) / 750
    merged = np.r_[build_cdf(a).ppf(ua), build_cdf(b).ppf(ub)]
    np.testing.assert_allclose(pooled.values, np.percentile(merged, PERCENTILES * 100), rtol=1e-12)
    assert a.median < pooled.median < b.values[-1]
