"""Estimators and distributional checks for replicated fields."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps
from scipy.special import logsumexp

from .core_field import FieldSample
from .errors import EmptyBatchError, InsufficientSamplesError

__all__ = [
    "SampleBatch",
    "TestReport",
    "ExpFit",
    "GumbelFit",
    "as_batch",
    "mean_se",
    "empirical_wp",
    "ks_statistic",
    "martingale_sum",
    "covariance_estimate",
    "extreme_fits",
    "log_linear_fit",
]


@dataclass
class SampleBatch:
    """One-dimensional sample with a cached sorted copy."""

    values: np.ndarray
    label: str = ""
    _sorted: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()

    @property
    def n_samples(self) -> int:
        return int(self.values.size)

    def sorted(self) -> np.ndarray:
        if self.n_samples == 0:
            raise EmptyBatchError(f"batch {self.label!r} is empty")
        if self._sorted is None:
            self._sorted = np.sort(self.values)
        return self._sorted

    def mean_se(self):
        return mean_se(self.values)


@dataclass
class TestReport:
    """Outcome of one check: passes when ``statistic <= threshold``."""

    __test__ = False  # not a pytest class

    name: str
    statistic: float
    threshold: float
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.statistic) and self.statistic <= self.threshold)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.statistic:.6g} <= {self.threshold:.6g}"

    def to_dict(self) -> dict:
        return {"name": self.name, "statistic": float(self.statistic),
                "threshold": float(self.threshold), "passed": self.passed,
                "metadata": self.metadata}


def as_batch(x, label: str = "") -> SampleBatch:
    return x if isinstance(x, SampleBatch) else SampleBatch(x, label)


def mean_se(x, axis: int = 0):
    """Sample mean and its standard error along ``axis``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    if n < 2:
        raise InsufficientSamplesError("need at least 2 samples for a standard error")
    return x.mean(axis=axis), x.std(axis=axis, ddof=1) / math.sqrt(n)


def _matched_quantiles(sorted_x: np.ndarray, size: int) -> np.ndarray:
    """Empirical quantiles of ``sorted_x`` at the midpoints of ``size`` equal cells."""
    lv = (np.arange(size) + 0.5) / size
    pos = lv * sorted_x.size - 0.5
    return np.interp(pos, np.arange(sorted_x.size), sorted_x)


def empirical_wp(a, b, p: float = 1.0) -> float:
    """Wasserstein-p distance between two empirical laws via order statistics.

    Unequal sizes are matched by resampling the larger batch at the
    quantile levels of the smaller one.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    xa, xb = as_batch(a).sorted(), as_batch(b).sorted()
    if xa.size != xb.size:
        if xa.size > xb.size:
            xa = _matched_quantiles(xa, xb.size)
        else:
            xb = _matched_quantiles(xb, xa.size)
    d = np.abs(xa - xb)
    if p == 1:
        return float(d.mean())
    return float(np.mean(d ** p) ** (1.0 / p))


def ks_statistic(a, ref) -> float:
    """Kolmogorov-Smirnov distance to a CDF (callable) or to another sample."""
    xa = as_batch(a).sorted()
    if callable(ref):
        return float(sps.kstest(xa, ref).statistic)
    xb = as_batch(ref).sorted()
    return float(sps.ks_2samp(xa, xb).statistic)


def martingale_sum(f, alpha: float, m_shift: float = 0.0, var_shift: float | None = None):
    """Leaf average of ``exp(alpha h - alpha m_shift - alpha^2 var_shift / 2)``.

    ``f`` is a FieldSample or an array of leaf values (leading replica axes
    allowed).  The sum is accumulated in the log domain.
    """
    if isinstance(f, FieldSample):
        leaves = f.leaves
        var_shift = f.depth_n if var_shift is None else var_shift
    else:
        leaves = np.asarray(f, dtype=np.float64)
        if var_shift is None:
            raise ValueError("var_shift is required for raw leaf arrays")
    if alpha == 0:
        return np.ones(leaves.shape[:-1])[()]
    size = leaves.shape[-1]
    lw = (logsumexp(alpha * leaves, axis=-1) - math.log(size)
          - alpha * m_shift - 0.5 * alpha * alpha * var_shift)
    return np.exp(lw)[()]


def covariance_estimate(values, pairs):
    """Covariance for each vertex pair, with standard errors.

    ``values`` has one row per replica (heap-ordered field values) and
    ``pairs`` is a list of index pairs.  Returns ``(cov, se)`` arrays.  The
    standard error uses the delta-method variance of the centred products.
    """
    values = np.asarray(values, dtype=np.float64)
    R = values.shape[0]
    if R < 3:
        raise InsufficientSamplesError("need at least 3 replicas")
    pairs = np.atleast_2d(np.asarray(pairs, dtype=np.int64))
    a = values[:, pairs[:, 0]]
    b = values[:, pairs[:, 1]]
    ca = a - a.mean(axis=0)
    cb = b - b.mean(axis=0)
    prod = ca * cb
    cov = prod.sum(axis=0) / (R - 1)
    se = prod.std(axis=0, ddof=1) / math.sqrt(R)
    return cov, se


@dataclass
class ExpFit:
    rate: float
    rate_se: float
    ks: float


@dataclass
class GumbelFit:
    """Law ``exp(-exp(-rate (x - loc)))`` fitted by moments."""

    loc: float
    rate: float
    ks: float


def extreme_fits(x, kind: str = "exp", min_samples: int = 500):
    """Exponential (MLE) or Gumbel (moment) fit with a KS distance to the fitted law.

    For ``kind="exp"`` the KS distance is to the unit exponential, since the
    scaled minimum is compared to Exp(1) rather than to its own fit.
    """
    b = as_batch(x)
    if b.n_samples < min_samples:
        raise InsufficientSamplesError(f"need at least {min_samples} samples, got {b.n_samples}")
    v = b.values
    if kind == "exp":
        rate = 1.0 / v.mean()
        return ExpFit(float(rate), float(rate / math.sqrt(v.size)), ks_statistic(b, sps.expon.cdf))
    if kind == "gumbel":
        rate = math.pi / (math.sqrt(6.0) * v.std(ddof=1))
        loc = v.mean() - np.euler_gamma / rate
        ks = ks_statistic(b, sps.gumbel_r(loc=loc, scale=1.0 / rate).cdf)
        return GumbelFit(float(loc), float(rate), ks)
    raise ValueError(f"unknown fit kind {kind!r}")


def log_linear_fit(x, y):
    """Least-squares slope and intercept of ``log y`` against ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ok = y > 0
    if ok.sum() < 2:
        raise InsufficientSamplesError("need two positive points")
    slope, intercept = np.polyfit(x[ok], np.log(y[ok]), 1)
    return float(slope), float(intercept)
