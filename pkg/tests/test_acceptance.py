"""Acceptance criteria at reference settings.

Each test runs the relevant experiments (sharing memoised runs through one
context), prints a single pass/fail line and then asserts.  The lines are
collected into the terminal summary under "acceptance criteria".
"""
from __future__ import annotations

import time

import pytest

from hardwall.harness.config import ExperimentConfig
from hardwall.harness.experiments import Context, run_experiment

from .conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def ctx(cache_dir):
    return Context(cache_dir=cache_dir)


@pytest.fixture(scope="module")
def results(ctx):
    """Experiment results at reference settings, with the wall time of the first call."""
    memo = {}

    def get(name):
        if name not in memo:
            t0 = time.perf_counter()
            res = run_experiment(ctx, ExperimentConfig(name).resolved())
            memo[name] = (res, time.perf_counter() - t0)
        return memo[name]

    return get


def record(criterion: int, title: str, reports, seconds: float, cap: float) -> None:
    ok = all(r.passed for r in reports) and seconds <= cap
    detail = "; ".join(f"{r.name}={r.statistic:.4g} (<= {r.threshold:.4g})" for r in reports)
    line = (f"criterion {criterion:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}; "
            f"time {seconds:.0f}s (<= {cap:.0f}s)")
    ACCEPTANCE_LINES.append(line)
    print(line)
    if not ok:
        pytest.fail(line, pytrace=False)


def pick(res, *prefixes):
    return [r for r in res.reports if r.name.startswith(prefixes)]


def test_criterion_01_tail_recursion(tmp_path):
    fresh = Context(cache_dir=tmp_path)
    res = run_experiment(fresh, ExperimentConfig("tables_selftest").resolved())
    assert fresh.rebuilt
    reps = pick(res, "tables.")
    record(1, "tail recursion", reps, fresh.table_seconds, 60.0)


def test_criterion_02_oracle_equivalence(results):
    res, secs = results("tails")
    record(2, "grid vs rejection", pick(res, "tails.rejection_max_z"), secs, 120.0)


def test_criterion_03_tail_convergence(results):
    res, _ = results("tails")
    t0 = time.perf_counter()
    reps = pick(res, "tails.cauchy_gap", "tails.log_derivative_gap")
    record(3, "convergence of p_n", reps, time.perf_counter() - t0, 10.0)


def test_criterion_04_sampler_vs_rejection(results):
    res, secs = results("tails")
    record(4, "sampler vs rejection", pick(res, "tails.sampler_vs_rejection_ks"), secs, 120.0)


def test_criterion_05_repulsion_profile(results):
    res, secs = results("profile")
    record(5, "repulsion profile", pick(res, "profile."), secs, 300.0)


def test_criterion_06_covariance(results):
    res, secs = results("covariance")
    record(6, "covariance", pick(res, "covariance."), secs, 300.0)


def test_criterion_07_minimum_law(results):
    res, secs = results("minimum")
    record(7, "minimum law", pick(res, "minimum."), secs, 600.0)


def test_criterion_08_maximum_law(results):
    res, secs = results("maximum")
    record(8, "maximum law", pick(res, "maximum."), secs, 600.0)


def test_criterion_09_additive_martingale(results):
    res, secs = results("martingale")
    record(9, "additive martingale", pick(res, "martingale."), secs, 300.0)


def test_criterion_10_mean_and_singularity(results):
    mean, s1 = results("mean")
    sing, s2 = results("singularity")
    record(10, "population mean", pick(mean, "mean.") + pick(sing, "singularity."), s1 + s2, 300.0)


def test_criterion_11_coupling_gradients(results):
    res, secs = results("coupling")
    record(11, "coupling gradients", pick(res, "coupling."), secs, 300.0)


def test_criterion_12_fixation_and_local_limit(results):
    fix, s1 = results("fixation")
    loc, s2 = results("local_limit")
    reps = pick(fix, "fixation.") + pick(loc, "local_limit.")
    record(12, "fixation and local limit", reps, s1 + s2, 600.0)


def test_criterion_13_limit_law_stability(results):
    res, secs = results("local_limit")
    record(13, "limiting law stability", pick(res, "plus_delta."), secs, 600.0)


def test_criterion_14_exponential_moments(results):
    res, _ = results("martingale")
    t0 = time.perf_counter()
    reps = pick(res, "a_alpha.")
    record(14, "exponential moments", reps, time.perf_counter() - t0, 10.0)
