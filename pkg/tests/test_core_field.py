from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hardwall.core_field import (
    C0, FieldSample, RngStream, ancestor, ball, child, common_ancestor_depth, depth, frac2, l, leaf_max,
    leaf_min, level_slice, m, mu_profile, n_vertices, nprime, parent, population_mean, sample_brw,
    sample_brw_batch,
)

# centering values computed with mpmath at 30 digits
M_REFERENCE = {
    1: 1.1774100225154747,
    2: 1.4717625281443434,
    4: 2.9435250562886867,
    5: 3.8366540547168915,
    8: 6.7701076294639795,
    16: 15.306330292701171,
    20: 19.7316893586758,
}


@pytest.mark.parametrize("n,expected", sorted(M_REFERENCE.items()))
def test_centering_matches_high_precision(n, expected):
    assert m(n) == pytest.approx(expected, abs=1e-12)


def test_constants_and_dyadic_helpers():
    assert C0 == pytest.approx(math.sqrt(2 * math.log(2)), abs=1e-15)
    assert [l(n) for n in (1, 2, 3, 4, 7, 8, 18, 20, 1024)] == [0, 1, 1, 2, 2, 3, 4, 4, 10]
    assert nprime(20) == 16
    assert frac2(20) == pytest.approx(0.32192809488736235, abs=1e-14)
    assert frac2(18) == pytest.approx(0.16992500144231236, abs=1e-14)
    assert frac2(16) == 0.0
    with pytest.raises(ValueError):
        m(0)


def test_mu_profile_shape():
    n = 16
    top = m(nprime(n))
    assert mu_profile(n, 0) == 0.0
    assert mu_profile(n, 1) == pytest.approx(top / 2)
    assert mu_profile(n, l(n)) == pytest.approx(top)
    assert mu_profile(n, n) == pytest.approx(top)
    vals = [mu_profile(n, k) for k in range(n + 1)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


@given(st.integers(min_value=1, max_value=2 ** 40))
def test_heap_algebra_roundtrip(i):
    assert parent(child(i, 0)) == i
    assert parent(child(i, 1)) == i
    assert depth(child(i, 1)) == depth(i) + 1
    assert ancestor(i, depth(i)) == i
    assert ancestor(i, 0) == 0


@given(st.integers(min_value=0, max_value=2 ** 20), st.integers(min_value=0, max_value=2 ** 20))
def test_common_ancestor_is_an_ancestor_of_both(i, j):
    d = common_ancestor_depth(i, j)
    assert ancestor(i, d) == ancestor(j, d)
    if d < min(depth(i), depth(j)):
        assert ancestor(i, d + 1) != ancestor(j, d + 1)


def test_vectorised_depth_matches_scalar():
    idx = np.arange(0, 5000)
    assert np.array_equal(depth(idx), [depth(int(i)) for i in idx])


def test_ball_distances():
    n = 10
    leaf = n_vertices(n) - 7
    b = ball(leaf, 4, n)
    assert len(set(b.tolist())) == len(b) == 10
    for v in b:
        a = common_ancestor_depth(leaf, int(v))
        assert depth(leaf) + depth(int(v)) - 2 * a <= 4


def test_rng_random_access_matches_sequential():
    rng = RngStream(7, 3)
    full = rng.uniforms(0, 1000)
    assert np.array_equal(rng.uniforms(123, 77), full[123:200])
    assert np.array_equal(rng.uniforms(5, 3), full[5:8])
    assert np.all((full > 0) & (full < 1))
    assert not np.array_equal(RngStream(7, 4).uniforms(0, 10), full[:10])
    assert not np.array_equal(rng.uniforms(0, 10, lane=1), full[:10])


def test_brw_deterministic_and_shaped():
    a = sample_brw(6, 0.5, RngStream(11))
    b = sample_brw(6, 0.5, RngStream(11))
    assert np.array_equal(a.values, b.values)
    assert a.values.shape == (n_vertices(6),)
    assert a.values[0] == 0.5
    assert leaf_min(a) <= population_mean(a) <= leaf_max(a)
    with pytest.raises(ValueError):
        FieldSample(3, np.zeros(5))


def test_brw_covariance_is_branch_depth():
    gen = np.random.default_rng(5)
    vals = sample_brw_batch(6, 20000, 0.0, gen)
    leaves = vals[:, level_slice(6)]
    for j, b in ((0, 6), (1, 5), (2, 4), (4, 3), (32, 0)):
        cov = np.mean(leaves[:, 0] * leaves[:, j])
        se = np.std(leaves[:, 0] * leaves[:, j]) / math.sqrt(20000)
        assert abs(cov - b) < 4 * se + 1e-9
