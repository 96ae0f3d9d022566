from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import norm

from hardwall import tail_grid as tg
from hardwall.core_field import m
from hardwall.errors import CorruptCacheError, GridTooNarrowError, VersionMismatchError

# values computed with mpmath quadrature at 30 digits
S1_REFERENCE = {-1.0: 0.70786098173714102, 0.0: 0.25, 0.5: 0.095195412803089864, 2.0: 0.00051756850365956425}
S2_REFERENCE = {-2.0: 0.74955280240671478, 0.0: 1.0 / 9.0, 1.0: 0.012814730831983587, 3.0: 7.2378835073517799e-6}
LOG_P2_AT_ZERO = -0.55115345723476811


@pytest.mark.parametrize("x,expected", sorted(S1_REFERENCE.items()))
def test_first_step_matches_gaussian_tail(small_table, x, expected):
    assert math.exp(small_table.log_S(1, x)) == pytest.approx(expected, rel=2e-5, abs=1e-7)


@pytest.mark.parametrize("x,expected", sorted(S2_REFERENCE.items()))
def test_second_step_matches_quadrature(small_table, x, expected):
    assert math.exp(small_table.log_S(2, x)) == pytest.approx(expected, rel=1e-4)


def test_p_n_is_shifted_survival(small_table):
    assert tg.p_n(small_table, 2, 0.0) == pytest.approx(LOG_P2_AT_ZERO, abs=1e-4)
    # the hard-wall probability: q_n(-m(n)) = 1 - S_n(0)
    assert tg.q_n(small_table, 2, -m(2)) == pytest.approx(1 - 1 / 9, abs=1e-5)


def test_s1_max_error_on_grid(small_table):
    x = small_table.survival(1).x
    sel = (x > -8) & (x < 8)
    err = np.max(np.abs(np.exp(small_table.S[1][sel]) - norm.sf(x[sel]) ** 2))
    assert err <= 1e-4


@pytest.mark.parametrize("k", [1, 2, 5, 17, 32])
def test_recursion_residual_small(small_table, k):
    assert tg.recursion_residual(small_table, k, n_points=40) <= 1e-6


def test_survival_is_monotone_and_bounded(small_table):
    S = small_table.S
    assert np.all(S <= 0.0)
    with np.errstate(invalid="ignore"):
        steps = np.diff(S, axis=1)
    assert np.all(np.where(np.isnan(steps), 0.0, steps) <= 0.0)
    # deeper tables are pushed left: S_k(x) decreases in k at fixed x
    assert np.all(S[5] <= S[4] + 1e-12)


def test_left_plateau_and_right_rule(small_table):
    g = small_table.survival(10)
    assert g(g.x0 - 5.0) == 0.0
    assert small_table.survival(0)(0.5) == -np.inf
    assert np.isfinite(g(g.x_end + 2.0))
    assert g(g.x_end + 2.0) < g(g.x_end)


def test_grid_too_narrow_is_rejected():
    spec = tg.GridSpec(-20.0, 0.01, 3000)
    with pytest.raises(GridTooNarrowError):
        tg.build_tail_table(32, spec)


def test_cache_roundtrip_and_integrity(tmp_path, small_table):
    path = tmp_path / "tab.bin"
    tg.save_table(small_table, path)
    back = tg.load_table(path)
    assert np.array_equal(back.S, small_table.S)
    assert back.spec == small_table.spec
    raw = bytearray(path.read_bytes())
    raw[200] ^= 0xFF
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(raw))
    with pytest.raises(CorruptCacheError):
        tg.load_table(bad)
    raw = bytearray(path.read_bytes())
    raw[8] = 99
    old = tmp_path / "old.bin"
    old.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatchError):
        tg.load_table(old)


def test_load_or_build_uses_cache(tmp_path):
    a, built = tg.load_or_build(16, 0.01, tmp_path)
    b, again = tg.load_or_build(16, 0.01, tmp_path)
    assert built and not again
    assert np.array_equal(a.S, b.S)


def test_rebuild_is_bit_identical():
    assert np.array_equal(tg.build_tail_table(12).S, tg.build_tail_table(12).S)


def test_left_tail_constant_positive(table):
    c, a = tg.estimate_left_tail_constant(table)
    assert 0.1 < c < 10
