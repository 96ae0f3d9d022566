from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import expon, norm

from hardwall import stats
from hardwall.core_field import sample_brw_batch, level_slice
from hardwall.errors import EmptyBatchError, InsufficientSamplesError

samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40)


@given(samples, st.floats(-10, 10))
def test_wasserstein_of_shift(xs, c):
    assert stats.empirical_wp(xs, xs, 1) == 0.0
    assert stats.empirical_wp(xs, np.asarray(xs) + c, 1) == pytest.approx(abs(c), abs=1e-9)


@settings(max_examples=60)
@given(samples, samples, samples)
def test_wasserstein_is_a_metric(a, b, c):
    n = min(len(a), len(b), len(c))
    a, b, c = a[:n], b[:n], c[:n]
    for p in (1.0, 2.0):
        ab = stats.empirical_wp(a, b, p)
        assert ab == pytest.approx(stats.empirical_wp(b, a, p))
        assert ab <= stats.empirical_wp(a, c, p) + stats.empirical_wp(c, b, p) + 1e-9


def test_wasserstein_unequal_sizes_and_errors():
    gen = np.random.default_rng(0)
    a, b = gen.normal(size=20000), gen.normal(size=5000) + 0.5
    assert stats.empirical_wp(a, b) == pytest.approx(0.5, abs=0.05)
    with pytest.raises(ValueError):
        stats.empirical_wp(a, b, 0.5)
    with pytest.raises(EmptyBatchError):
        stats.empirical_wp([], b)


def test_ks_calibration():
    gen = np.random.default_rng(1)
    hits = sum(stats.ks_statistic(gen.normal(size=400), norm.cdf) > 1.36 / 20 for _ in range(400))
    assert hits / 400 < 0.1
    assert stats.ks_statistic(gen.normal(size=2000), gen.normal(size=2000) + 1) > 0.3


def test_mean_se_and_batch():
    b = stats.SampleBatch([3.0, 1.0, 2.0])
    assert np.array_equal(b.sorted(), [1.0, 2.0, 3.0])
    mean, se = b.mean_se()
    assert mean == 2.0 and se == pytest.approx(1 / math.sqrt(3))
    with pytest.raises(InsufficientSamplesError):
        stats.mean_se([1.0])


def test_report_pass_logic():
    assert stats.TestReport("a", 0.1, 0.2).passed
    assert not stats.TestReport("a", 0.3, 0.2).passed
    assert not stats.TestReport("a", float("nan"), 0.2).passed
    d = stats.TestReport("a", 0.1, 0.2, {"n": 3}).to_dict()
    assert d["passed"] and d["metadata"] == {"n": 3}


def test_martingale_has_unit_mean_without_conditioning():
    gen = np.random.default_rng(2)
    n, alpha = 12, 0.5
    leaves = sample_brw_batch(n, 1000, 0.0, gen)[:, level_slice(n)]
    w = stats.martingale_sum(leaves, alpha, var_shift=n)
    mean, se = stats.mean_se(w)
    assert abs(mean - 1.0) < 3 * se
    assert np.array_equal(stats.martingale_sum(leaves, 0.0, var_shift=n), np.ones(1000))
    with pytest.raises(ValueError):
        stats.martingale_sum(leaves, alpha)


def test_martingale_log_domain_is_stable():
    leaves = np.full((1, 8), 500.0)
    assert stats.martingale_sum(leaves, 2.0, m_shift=500.0, var_shift=0.0) == pytest.approx(1.0)


def test_covariance_of_unconditioned_walk():
    gen = np.random.default_rng(3)
    n = 5
    vals = sample_brw_batch(n, 20000, 0.0, gen)
    leaf0 = 2 ** n - 1
    pairs = [(leaf0, leaf0), (leaf0, leaf0 + 1), (leaf0, leaf0 + 2), (leaf0, leaf0 + 16)]
    cov, se = stats.covariance_estimate(vals, pairs)
    assert np.all(np.abs(cov - np.array([5, 4, 3, 0])) < 4 * se)
    with pytest.raises(InsufficientSamplesError):
        stats.covariance_estimate(vals[:2], pairs)


def test_exponential_fit():
    x = expon.rvs(size=5000, random_state=4)
    fit = stats.extreme_fits(x, "exp")
    assert abs(fit.rate - 1.0) < 4 * fit.rate_se
    assert fit.ks < 0.03
    with pytest.raises(InsufficientSamplesError):
        stats.extreme_fits(x[:100])
    with pytest.raises(ValueError):
        stats.extreme_fits(x, "weibull")


def test_gumbel_fit():
    gen = np.random.default_rng(5)
    x = 2.0 + gen.gumbel(size=20000) / 1.5
    fit = stats.extreme_fits(x, "gumbel")
    assert fit.loc == pytest.approx(2.0, abs=0.03)
    assert fit.rate == pytest.approx(1.5, abs=0.05)
    assert fit.ks < 0.02
    # the fitted law puts mass exp(-1) below its location
    assert np.mean(x <= fit.loc) == pytest.approx(math.exp(-1.0), abs=0.015)


def test_log_linear_fit():
    x = np.arange(6.0)
    slope, icpt = stats.log_linear_fit(x, 3.0 * np.exp(-0.5 * x))
    assert (slope, icpt) == pytest.approx((-0.5, math.log(3.0)))
