from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.special import ndtr, ndtri
from scipy.stats import kstest, norm

from hardwall import conditioned_sampler as cs
from hardwall.core_field import C0, RngStream, level_slice, m, n_vertices
from hardwall.errors import BudgetExceededError


def truncated_quantile(d, z):
    """Quantile at Phi(z) of N(d, 1) restricted to [0, inf)."""
    a = ndtr(-d)
    return d + ndtri(a + ndtr(z) * (1.0 - a))


def test_condition_spec_basics():
    s = cs.ConditionSpec.hard_wall(8)
    assert s.threshold == pytest.approx(0.0, abs=1e-12)
    r = cs.ConditionSpec(8, 1.5, 0.7).recentred()
    assert (r.u, r.v) == pytest.approx((0.8, 0.0))
    inf = cs.ConditionSpec(None, 2.0)
    assert inf.level(3) == pytest.approx(2.0 - 3 * C0)
    with pytest.raises(ValueError):
        inf.threshold


def test_last_step_bank_is_truncated_gaussian(table):
    bank = cs.kernel_bank(table, 0)
    z = np.linspace(-3, 3, 25)
    for d in (-1.5, 0.0, 0.7, 3.0):
        got = d + z + bank(d, z)
        assert np.max(np.abs(got - truncated_quantile(d, z))) < 2e-3


def test_bank_vanishes_far_from_the_wall(table):
    bank = cs.kernel_bank(table, 3)
    assert np.max(np.abs(bank(bank.d_max, np.linspace(-4, 4, 9)))) == 0.0


def test_kernel_quantile_matches_truncated_gaussian(table):
    k = cs.child_kernel(0.4, 0, 0.0, table)
    u = np.array([0.01, 0.2, 0.5, 0.8, 0.999])
    assert np.allclose(cs.kernel_quantile(k, u), truncated_quantile(0.4, ndtri(u)), atol=1e-3)
    assert k.log_mass() == pytest.approx(0.0, abs=1e-9)


def test_untilted_step_is_heat_kernel(table):
    flat = cs.Tilt(lambda w: np.zeros(np.shape(w)), lambda v: np.zeros(np.shape(v)))
    law = cs.propagate_depth_law(cs.DepthLaw.point(0.3), flat, table.dx)
    law = cs.propagate_depth_law(law, flat, table.dx)
    x = law.density.x
    exact = norm.pdf(x, 0.3, math.sqrt(2.0))
    tv = 0.5 * np.sum(np.abs(np.exp(law.density.log_values) - exact)) * table.dx
    assert tv <= 1e-6


def test_per_parent_normalisation(table):
    spec = cs.ConditionSpec.hard_wall(10)
    law = cs.spine_law(spec, 3, table)
    tilt = cs.finite_tilt(table, 10 - 3 - 1, spec.threshold)
    _, log_mass = cs.propagate_depth_law(law, tilt, table.dx, return_log_mass=True)
    assert abs(log_mass) <= 1e-8


def test_spine_leaf_law_respects_the_wall(table):
    spec = cs.ConditionSpec.hard_wall(6)
    law = cs.spine_law(spec, 6, table)
    assert law.cdf(-1e-9) == 0.0
    assert law.mass() == pytest.approx(1.0, abs=1e-8)


def test_hard_wall_leaves_nonnegative(table):
    for seed in range(5):
        f = cs.sample_hard_wall(12, table, RngStream(seed))
        assert f.values[level_slice(12)].min() >= 0.0
        assert f.values[0] == 0.0


def test_rejection_oracle_edge_cases():
    vals, attempts = cs.rejection_oracle_hard_wall(0, RngStream(1), size=5)
    assert attempts >= 5 and vals.shape == (5, 1)
    with pytest.raises(BudgetExceededError):
        cs.rejection_oracle_hard_wall(6, RngStream(1), size=10, max_attempts=100, chunk=100)
    with pytest.raises(ValueError):
        cs.rejection_oracle_hard_wall(7, RngStream(1))


def test_rejection_acceptance_rate():
    # P(all four grandchildren >= 0) = 1/9 for the two-level walk
    _, attempts = cs.rejection_oracle_hard_wall(2, RngStream(3), size=20000, chunk=200)
    p = 20000 / attempts
    se = math.sqrt(p * (1 - p) / attempts)
    assert abs(p - 1 / 9) < 4 * se


def test_shift_relation_is_exact(table):
    rng = RngStream(4)
    spec = cs.ConditionSpec(9, 1.2, 0.8)
    scores = lambda k: cs._scores(rng, k, 50)
    a = cs.sample_conditioned_batch(spec, table, scores)
    b = cs.sample_conditioned_batch(spec.recentred(), table, scores)
    assert np.allclose(a, b + 0.8, atol=1e-9)


def test_sampler_marginal_matches_spine_law(table):
    spec = cs.ConditionSpec.hard_wall(5)
    rng = RngStream(8)
    vals = cs.sample_conditioned_batch(spec, table, lambda k: cs._scores(rng, k, 4000))
    for k in (1, 5):
        law = cs.spine_law(spec, k, table)
        stat = kstest(vals[:, n_vertices(k - 1)], law.cdf).statistic
        assert stat < 1.63 / math.sqrt(4000)


def test_infinite_volume_far_above_level_is_free(table):
    rng = RngStream(2)
    f = cs.sample_infinite_up(6, -80.0, 0.0, table, rng)
    walk = np.zeros(n_vertices(6))
    for k in range(1, 7):
        z = rng.level_scores(k)
        walk[level_slice(k)] = np.repeat(walk[level_slice(k - 1)], 2) + z
    assert np.allclose(f.values, walk, atol=1e-12)


def test_exponential_moment_basics(table):
    pd = cs.build_plus_delta(0.0, 10, table)
    assert cs.a_alpha_delta(pd, 0.0, table) == 1.0
    assert cs.a_alpha(np.array([-1.0, 2.0]), 0.0, table) == pytest.approx([1.0, 1.0])
    vals = cs.a_alpha(np.linspace(-5, 5, 11), C0 / 2, table)
    assert np.all(vals >= 1.0)
    # raising the level pushes the field up
    assert np.all(np.diff(vals) > 0)


def test_limiting_root_law_and_rate(table):
    for delta in (0.0, 0.5):
        pd = cs.build_plus_delta(delta, 10, table)
        mean, var = pd.root_law.moments()
        assert abs(mean) <= 5.0 and var > 0
        assert pd.root_law.mass() == pytest.approx(1.0, abs=1e-8)
        assert cs.kappa(pd, table) > 0.0
    with pytest.raises(ValueError):
        cs.build_plus_delta(1.0, 10, table)


def test_maximum_centering_ingredients(table):
    out = cs.maximum_centering(20, table)
    assert 0 < out["a_c0_delta"] < 1
    assert out["tail_constant"] > 0
    assert out["m_plus"] > 2 * m(16)
