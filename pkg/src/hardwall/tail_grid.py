"""Survival functions of the leaf minimum on a log-domain grid.

``S_k(x)`` is the probability that all ``2^k`` leaves of a depth-k branching
random walk started at 0 are at least ``x``.  Independence of the two
subtrees below the root gives the recursion

    S_0(x) = 1{x <= 0},    S_k(x) = ( int phi(z) S_{k-1}(x - z) dz )^2,

which is evaluated in the log domain for k = 1..N on one shared lattice.
"""
from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_ndtr

from . import _kernels as K
from .core_field import C0, m
from .errors import CorruptCacheError, GridTooNarrowError, VersionMismatchError

__all__ = [
    "GridFn",
    "GridSpec",
    "TailTable",
    "build_tail_table",
    "default_grid_spec",
    "p_n",
    "p_inf_proxy",
    "log_deriv_p",
    "q_n",
    "save_table",
    "load_table",
    "load_or_build",
    "recursion_residual",
    "cauchy_gap",
    "estimate_left_tail_constant",
    "log_smooth",
    "N_REF",
]

N_REF = 512
LEFT_MARGIN = 40.0
RIGHT_EDGE = 12.0
# half-width (in x units) of the overlap between the q-route and the S-route
SPLIT_MARGIN = 6.0
SMOOTH_STRIDE = 20
DROP = 46.0

QUADRATIC = "quadratic-extrapolation"
ZERO = "zero"


@dataclass
class GridFn:
    """Log-values of a nonnegative function on the lattice ``x = (i0 + j) dx``."""

    i0: int
    dx: float
    log_values: np.ndarray
    left_plateau: float = -np.inf
    right_rule: str = ZERO

    def __post_init__(self):
        self.log_values = np.asarray(self.log_values, dtype=np.float64)
        if np.isnan(self.log_values).any():
            raise ValueError("GridFn log-values contain NaN")

    @property
    def x0(self) -> float:
        return self.i0 * self.dx

    @property
    def x(self) -> np.ndarray:
        return (self.i0 + np.arange(self.log_values.size)) * self.dx

    @property
    def x_end(self) -> float:
        return (self.i0 + self.log_values.size - 1) * self.dx

    def _right_coeffs(self):
        f = self.log_values
        a, b1, b2 = f[-1], f[-2], f[-3]
        if not np.isfinite([a, b1, b2]).all():
            return None
        slope = (3 * a - 4 * b1 + b2) / 2.0 / self.dx
        curv = min((a - 2 * b1 + b2) / self.dx ** 2, 0.0)
        return a, slope, curv

    def __call__(self, x):
        """Linear interpolation of the log-values, with the edge rules outside."""
        x = np.asarray(x, dtype=np.float64)
        f = self.log_values
        pos = x / self.dx - self.i0
        n = f.size
        j = np.clip(np.floor(pos).astype(np.int64), 0, n - 2)
        a = pos - j
        lo, hi = f[j], f[j + 1]
        with np.errstate(invalid="ignore"):
            out = np.where(a == 0.0, lo, np.where(a == 1.0, hi, (1 - a) * lo + a * hi))
        # -inf neighbours: keep the finite side only at exact nodes
        out = np.where(np.isnan(out), -np.inf, out)
        out = np.where(pos < 0, self.left_plateau, out)
        right = pos > n - 1
        if np.any(right):
            coeffs = self._right_coeffs() if self.right_rule == QUADRATIC else None
            if coeffs is None:
                ext = np.full(x.shape, -np.inf)
            else:
                a0, b, c = coeffs
                t = x - self.x_end
                ext = a0 + b * t + 0.5 * c * t * t
            out = np.where(right, ext, out)
        return out[()] if out.ndim == 0 else out

    def values_on(self, start: int, count: int) -> np.ndarray:
        """Log-values at lattice indices ``start .. start+count-1`` (edge rules outside)."""
        idx = np.arange(start, start + count) - self.i0
        n = self.log_values.size
        inside = (idx >= 0) & (idx < n)
        out = np.empty(count)
        out[inside] = self.log_values[idx[inside]]
        if np.any(idx < 0):
            out[idx < 0] = self.left_plateau
        if np.any(idx >= n):
            out[idx >= n] = self(((idx[idx >= n] + self.i0) * self.dx))
        return out

    def log_mass(self) -> float:
        f = self.log_values
        top = f.max()
        if not np.isfinite(top):
            return -np.inf
        return float(top + np.log(np.sum(np.exp(f - top)) * self.dx))


@dataclass(frozen=True)
class GridSpec:
    x0: float
    dx: float
    length: int

    @property
    def i0(self) -> int:
        return int(round(self.x0 / self.dx))

    @property
    def x_end(self) -> float:
        return (self.i0 + self.length - 1) * self.dx

    def digest(self, N: int) -> str:
        h = hashlib.blake2b(digest_size=8)
        h.update(struct.pack("<Iddq", N, self.x0, self.dx, self.length))
        return h.hexdigest()


def default_grid_spec(N: int, dx: float = 0.01) -> GridSpec:
    """Lattice covering [-m(N) - 40, 12] with the origin on a node."""
    i0 = int(math.floor((-m(N) - LEFT_MARGIN) / dx))
    i1 = int(math.ceil(RIGHT_EDGE / dx))
    return GridSpec(i0 * dx, dx, i1 - i0 + 1)


@dataclass
class TailTable:
    """All survival functions ``S_0 .. S_N`` on one lattice."""

    N: int
    spec: GridSpec
    S: np.ndarray = field(repr=False)
    build_digest: str = ""
    n_ref: int = N_REF
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dx(self) -> float:
        return self.spec.dx

    @property
    def i0(self) -> int:
        return self.spec.i0

    def survival(self, k: int) -> GridFn:
        if not 0 <= k <= self.N:
            raise ValueError(f"depth {k} outside table 0..{self.N}")
        rule = ZERO if k == 0 else QUADRATIC
        return GridFn(self.i0, self.dx, self.S[k], left_plateau=0.0, right_rule=rule)

    def log_S(self, k: int, x):
        return self.survival(k)(x)


def log_smooth(src: GridFn, out_start: int, out_n: int, shift: float = 0.0,
               stride: int = SMOOTH_STRIDE, lmode: int | None = None) -> np.ndarray:
    """``log int phi(z - shift) exp(src(x - z)) dz`` on lattice indices ``out_start + i``."""
    if lmode is None:
        lmode = K.CONST if np.isfinite(src.left_plateau) else K.ZERO
    rmode = K.QUAD if src.right_rule == QUADRATIC else K.ZERO
    return K.log_gauss_smooth(src.log_values, src.i0, lmode, float(src.left_plateau), rmode,
                              int(out_start), int(out_n), int(stride), float(shift), src.dx, DROP)


def build_tail_table(N: int, spec: GridSpec | None = None, stride: int = SMOOTH_STRIDE) -> TailTable:
    """Run the squared-smoothing recursion up to depth ``N``.

    Each output point is integrated on a window centred at the mode of its
    own integrand ``log phi(z) + log S_{k-1}(x - z)`` and rescaled there, so
    the deep right tail (where that mode sits hundreds of units from z = 0)
    is as accurate as the bulk.  The first step integrates the step function
    with unit stride and the jump node weighted by 1/2 (trapezoid rule).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if spec is None:
        spec = default_grid_spec(N)
    if spec.dx > 0.02:
        raise ValueError("dx must be <= 0.02")
    if spec.x0 > -m(N) - LEFT_MARGIN + 1e-9 or spec.x_end < RIGHT_EDGE - 1e-9:
        raise GridTooNarrowError(
            f"grid [{spec.x0:.2f}, {spec.x_end:.2f}] does not cover [-m(N)-40, 12] for N={N}")
    i0, L, dx = spec.i0, spec.length, spec.dx
    S = np.zeros((N + 1, L))
    zero_idx = -i0
    S[0, zero_idx + 1:] = -np.inf
    margin = int(round(SPLIT_MARGIN / dx))
    log_half = math.log(0.5)
    for k in range(1, N + 1):
        prev = S[k - 1]
        st = stride
        if k == 1:
            prev = prev.copy()
            prev[zero_idx] = log_half
            st = 1
        # ahead of the front S is within 1e-16 of one, so smooth q = 1 - S there
        below = np.nonzero(prev < log_half)[0]
        split = int(below[0]) if below.size else L
        split = max(0, split - int(round(C0 / dx)))
        row = S[k]
        s_lo = max(0, split - margin)
        src = GridFn(i0, dx, prev, left_plateau=0.0, right_rule=ZERO if k == 1 else QUADRATIC)
        out_s = 2.0 * log_smooth(src, i0 + s_lo, L - s_lo, 0.0, st)
        row[s_lo:] = out_s
        q_hi = min(L, split + margin)
        if q_hi > 0:
            with np.errstate(divide="ignore"):
                log_q = np.log(-np.expm1(prev))
            log_Q = K.log_gauss_smooth(log_q, i0, K.ZERO, -np.inf, K.CONST, i0, q_hi, st, 0.0, dx, DROP)
            Q = np.exp(log_Q)
            via_q = 2.0 * np.log1p(-np.minimum(Q, 1.0))
            use = Q < 0.5
            head = row[:q_hi]
            head[use] = via_q[use]
            # points left of the S-route window must come from the q route
            head[: s_lo][~use[: s_lo]] = via_q[: s_lo][~use[: s_lo]]
        # survival is at most one and nonincreasing
        np.minimum(row, 0.0, out=row)
        np.minimum.accumulate(row, out=row)
    tab = TailTable(N, spec, S)
    tab.build_digest = spec.digest(N)
    return tab


# --- tail functions ----------------------------------------------------------

def p_n(table: TailTable, n: int, u):
    """``log P(min over depth-n leaves >= -m(n) + u)``."""
    if not 1 <= n <= table.N:
        raise ValueError(f"n={n} outside 1..{table.N}")
    return table.log_S(n, -m(n) + np.asarray(u, dtype=np.float64))


def p_inf_proxy(table: TailTable, u, n_ref: int | None = None):
    """Proxy for the limiting tail: ``p_{n_ref}`` (default 512)."""
    n_ref = table.n_ref if n_ref is None else n_ref
    if table.N < n_ref:
        raise ValueError(f"table depth {table.N} below n_ref={n_ref}")
    return p_n(table, n_ref, u)


def log_deriv_p(table: TailTable, n, u):
    """Centred difference of ``log p_n`` at spacing dx; ``n=None`` uses the proxy."""
    u = np.asarray(u, dtype=np.float64)
    h = table.dx
    f = (lambda s: p_inf_proxy(table, s)) if n is None else (lambda s: p_n(table, n, s))
    return (f(u + h) - f(u - h)) / (2 * h)


def q_n(table: TailTable, n: int, u):
    """``1 - p_n(-u)`` evaluated through expm1."""
    return -np.expm1(p_n(table, n, -np.asarray(u, dtype=np.float64)))


def cauchy_gap(table: TailTable, n_a: int = 256, n_b: int | None = None, lo=-5.0, hi=5.0, step=0.01):
    """sup |p_{n_a} - p_{n_b}| over [lo, hi] (probabilities, not logs)."""
    n_b = table.n_ref if n_b is None else n_b
    u = np.arange(lo, hi + step / 2, step)
    return float(np.max(np.abs(np.exp(p_n(table, n_a, u)) - np.exp(p_n(table, n_b, u)))))


def recursion_residual(table: TailTable, k: int, n_points: int = 100, seed: int = 0) -> float:
    """Max relative residual of the squared-smoothing identity at random nodes.

    The right-hand side is recomputed independently with a full unit-stride
    sum over every lattice node (no mode search, no windowing) plus the exact
    contribution of the left plateau.
    """
    if not 1 <= k <= table.N:
        raise ValueError("k outside table")
    dx, i0 = table.dx, table.i0
    prev = table.S[k - 1].copy()
    if k == 1:
        prev[-i0] = math.log(0.5)
    lo = max(0, int(math.floor((-m(k) - 30) / dx)) - i0)
    hi = table.spec.length - 1
    finite = np.nonzero(np.isfinite(table.S[k]))[0]
    hi = min(hi, finite[-1])
    rng = np.random.default_rng(seed + k)
    nodes = rng.integers(lo, hi + 1, size=n_points)
    xs = (i0 + np.arange(prev.size)) * dx
    log_phi_norm = -0.5 * math.log(2 * math.pi) + math.log(dx)
    worst = 0.0
    for j in nodes:
        x = (i0 + j) * dx
        g = -0.5 * (x - xs) ** 2 + prev + log_phi_norm
        top = np.max(g)
        terms = np.exp(g - top)
        total = top + math.log(terms.sum())
        # plateau beyond the left edge: S = 1 for arguments < x0
        plateau = float(log_ndtr(-(x - xs[0]) / 1.0)) if np.isfinite(x) else -np.inf
        total = np.logaddexp(total, plateau)
        rhs = 2.0 * total
        lhs = table.S[k, j]
        worst = max(worst, abs(math.expm1(lhs - rhs)))
    return worst


def estimate_left_tail_constant(table: TailTable, n: int | None = None, u_lo=8.0, u_hi=18.0):
    """Fit ``q_n(u) e^{c0 u} = C0 (u + a)`` on [u_lo, u_hi]; returns (C0, a)."""
    n = table.n_ref if n is None else n
    u = np.linspace(u_lo, u_hi, 41)
    y = q_n(table, n, u) * np.exp(C0 * u)
    slope, icpt = np.polyfit(u, y, 1)
    return float(slope), float(icpt / slope)


# --- cache file --------------------------------------------------------------

_MAGIC = b"HWTAILTB"
_VERSION = 1
_HEADER = struct.Struct("<8sIIddQ")


def save_table(table: TailTable, path) -> None:
    path = Path(path)
    header = _HEADER.pack(_MAGIC, _VERSION, table.N, table.spec.x0, table.spec.dx, table.spec.length)
    body = np.ascontiguousarray(table.S, dtype="<f8").tobytes()
    h = hashlib.blake2b(digest_size=8)
    h.update(header)
    h.update(body)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(body)
        fh.write(h.digest())
    os.replace(tmp, path)


def load_table(path) -> TailTable:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 8:
        raise CorruptCacheError(f"{path}: file too short")
    magic, version, N, x0, dx, length = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise CorruptCacheError(f"{path}: bad magic")
    if version != _VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {_VERSION}")
    nbytes = (N + 1) * length * 8
    if len(data) != _HEADER.size + nbytes + 8:
        raise CorruptCacheError(f"{path}: truncated or padded payload")
    h = hashlib.blake2b(digest_size=8)
    h.update(data[:-8])
    if h.digest() != data[-8:]:
        raise CorruptCacheError(f"{path}: checksum mismatch")
    S = np.frombuffer(data, dtype="<f8", count=(N + 1) * length, offset=_HEADER.size)
    spec = GridSpec(x0, dx, int(length))
    return TailTable(int(N), spec, S.reshape(N + 1, length).astype(np.float64), spec.digest(N))


def cache_path(cache_dir, N: int, spec: GridSpec) -> Path:
    return Path(cache_dir) / f"tail_N{N}_{spec.digest(N)}.bin"


def load_or_build(N: int = N_REF, dx: float = 0.01, cache_dir=None, spec: GridSpec | None = None):
    """Reuse a cached table whose header matches the requested grid, else rebuild.

    Returns ``(table, rebuilt)``.
    """
    spec = default_grid_spec(N, dx) if spec is None else spec
    if cache_dir is None:
        return build_tail_table(N, spec), True
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_path(cache_dir, N, spec)
    if path.exists():
        try:
            tab = load_table(path)
            if tab.N == N and tab.spec == spec:
                return tab, False
        except (CorruptCacheError, VersionMismatchError):
            pass
    tab = build_tail_table(N, spec)
    save_table(tab, path)
    return tab, True
