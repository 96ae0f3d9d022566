"""Samplers and grid propagators for the conditioned field.

Conditioning the walk on ``min over leaves >= t`` turns it into a Markov
chain down the tree: given its parent value ``v``, a child at remaining
depth ``r`` (number of generations below it) has density proportional to

    phi(w - v) * S_r(t - w),

and the two children are independent.  For the infinite-volume law the
survival factor is replaced by ``p_inf(u - c0 (k+1) - w)`` at depth k+1.

Field samplers draw every child by inverting the child kernel's CDF at a
per-vertex uniform.  To keep that cheap for millions of vertices the
inverse CDFs are tabulated once per remaining depth as a correction
``eps(d, z)`` to the unconditioned step, where ``d`` is the parent height
above the threshold and ``z = Phi^{-1}(U)``:

    child = parent + z + eps(parent - threshold, z).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import _kernels as K
from .core_field import (
    C0, FieldSample, RngStream, frac2, l, level_slice, m, n_vertices, nprime, sample_brw_batch,
)
from .errors import BudgetExceededError, DegenerateKernelError, WindowEscapeError
from .tail_grid import (
    DROP, SMOOTH_STRIDE, GridFn, TailTable, estimate_left_tail_constant, log_deriv_p, p_inf_proxy,
)

__all__ = [
    "ConditionSpec",
    "DepthLaw",
    "PlusDeltaLaw",
    "KernelBank",
    "Tilt",
    "child_kernel",
    "kernel_quantile",
    "kernel_bank",
    "sample_conditioned_field",
    "sample_conditioned_batch",
    "sample_hard_wall",
    "rejection_oracle_hard_wall",
    "sample_infinite_up",
    "propagate_depth_law",
    "spine_law",
    "finite_tilt",
    "infinite_tilt",
    "build_plus_delta",
    "plus_delta_gap",
    "sample_plus_delta_field",
    "AlphaCurve",
    "alpha_curve",
    "a_alpha",
    "a_alpha_delta",
    "kappa",
    "maximum_centering",
    "wasserstein_laws",
]

INF = None  # depth tag for the infinite-volume proxy
KERNEL_HALF_WIDTH = 12.0
Z_MAX = 8.5


@dataclass(frozen=True)
class ConditionSpec:
    """Root value ``v`` and tail level ``u``; ``n=None`` selects the infinite-volume proxy."""

    n: int | None
    u: float
    v: float = 0.0

    @classmethod
    def hard_wall(cls, n: int) -> "ConditionSpec":
        return cls(n, m(n), 0.0)

    @property
    def finite(self) -> bool:
        return self.n is not None

    @property
    def threshold(self) -> float:
        """Absolute leaf threshold ``-m(n) + u`` (finite n only)."""
        if self.n is None:
            raise ValueError("infinite-volume spec has a depth-dependent level")
        return -m(self.n) + self.u

    def level(self, depth: int) -> float:
        """Infinite volume: the survival argument offset at ``depth`` is ``u - c0 depth``."""
        return self.u - C0 * depth

    def recentred(self) -> "ConditionSpec":
        """The same law written with root 0: ``v + spec(n, u - v, 0)``."""
        return ConditionSpec(self.n, self.u - self.v, 0.0)


# --- tilts ---------------------------------------------------------------------

@dataclass
class Tilt:
    """Survival factor for one generation of the chain.

    ``log_tilt(w)`` weights the child value; ``log_norm(v)`` (optional) is the
    log normaliser ``log int phi(w - v) tilt(w) dw`` of the child kernel.
    """

    log_tilt: object
    log_norm: object = None
    lower: float = -np.inf


def finite_tilt(table: TailTable, r: int, t: float) -> Tilt:
    """Child at remaining depth ``r`` below threshold ``t``; normaliser from the recursion."""
    sr = table.survival(r)
    sr1 = table.survival(r + 1)
    lower = t if r == 0 else -np.inf
    return Tilt(lambda w: sr(t - np.asarray(w)), lambda v: 0.5 * sr1(t - np.asarray(v)), lower)


def infinite_tilt(table: TailTable, level: float) -> Tilt:
    """Infinite-volume factor ``p_inf(level - w)``."""
    return Tilt(lambda w: p_inf_proxy(table, level - np.asarray(w)))


# --- single kernels ------------------------------------------------------------------

def _mode_search(log_f, centre: float, dx: float, lower: float = -np.inf) -> float:
    """Mode of a unimodal log-density by expanding coarse scans."""
    lo, hi = centre - 16.0, centre + 16.0
    for _ in range(60):
        lo_eff = max(lo, lower)
        w = np.linspace(lo_eff, hi, 1601)
        g = log_f(w)
        j = int(np.argmax(g))
        if not np.isfinite(g[j]):
            if lower > -np.inf and hi < lower:
                lo, hi = lower, lower + 32.0
                continue
            raise DegenerateKernelError("kernel has no mass in the search window")
        if j == len(w) - 1:
            lo, hi = hi - 1.0, hi + 2.0 * (hi - lo)
        elif j == 0 and lo_eff > lower:
            lo, hi = lo - 2.0 * (hi - lo), lo + 1.0
        else:
            # refine on a fine grid around the coarse maximum
            step = w[1] - w[0]
            wf = np.arange(max(w[j] - 2 * step, lower), w[j] + 2 * step, dx / 4)
            gf = log_f(wf)
            return float(wf[int(np.argmax(gf))])
    raise DegenerateKernelError("mode search did not converge")


def child_kernel(parent_value: float, r: int | None, t: float, table: TailTable,
                 dx: float | None = None) -> GridFn:
    """Normalised log-density of a child given its parent.

    ``r`` is the remaining depth below the child and ``t`` the leaf threshold;
    with ``r=None`` the infinite-volume factor ``p_inf(t - w)`` is used (pass
    ``t = u - c0 (k+1)``).  ``r=0`` gives a Gaussian truncated to ``[t, inf)``.
    """
    dx = table.dx if dx is None else dx
    if r is None:
        tilt = infinite_tilt(table, t)
    else:
        tilt = finite_tilt(table, r, t)

    def log_f(w):
        return -0.5 * (np.asarray(w) - parent_value) ** 2 + tilt.log_tilt(w)

    mode = _mode_search(log_f, parent_value, dx, tilt.lower)
    lo = mode - KERNEL_HALF_WIDTH
    if tilt.lower > -np.inf:
        lo = max(lo, tilt.lower)
    i_lo = int(math.ceil(lo / dx - 1e-9))
    i_hi = int(math.floor((mode + KERNEL_HALF_WIDTH) / dx))
    w = np.arange(i_lo, i_hi + 1) * dx
    f = log_f(w) - 0.5 * math.log(2 * math.pi)
    g = GridFn(i_lo, dx, f)
    lm = g.log_mass()
    if not np.isfinite(lm):
        raise DegenerateKernelError(f"child kernel mass underflows (parent={parent_value}, t={t})")
    g.log_values = f - lm
    return g


def _cdf_tables(logd: np.ndarray, dx: float):
    """Trapezoid CDF and survival function (rows normalised) from log-densities."""
    dens = np.exp(logd - logd.max(axis=-1, keepdims=True))
    cells = 0.5 * (dens[..., 1:] + dens[..., :-1]) * dx
    zero = np.zeros(dens.shape[:-1] + (1,))
    cdf = np.concatenate([zero, np.cumsum(cells, axis=-1)], axis=-1)
    sf = np.concatenate([np.cumsum(cells[..., ::-1], axis=-1)[..., ::-1], zero], axis=-1)
    total = cdf[..., -1:]
    return cdf / total, sf / total


def kernel_quantile(kernel: GridFn, u) -> np.ndarray:
    """Inverse CDF of a tabulated density at levels ``u`` (linear inside cells).

    Levels above 1/2 are inverted through the survival function so that
    upper-tail quantiles keep their precision.
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    x = kernel.x
    cdf, sf = _cdf_tables(kernel.log_values, kernel.dx)
    out = np.empty_like(u)
    low = u <= 0.5
    out[low] = np.interp(u[low], cdf, x)
    out[~low] = np.interp(-(1.0 - u[~low]), -sf, x)
    return out


# --- tabulated inverse CDFs ----------------------------------------------------

@dataclass
class KernelBank:
    """Quantile correction ``eps(d, z)`` on a regular (d, z) grid."""

    eps: np.ndarray
    d0: float
    dd: float
    z0: float
    dz: float
    label: str = ""

    def __call__(self, d, z):
        d = np.asarray(d, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        out = np.empty(np.broadcast(d, z).shape)
        flat_d, flat_z = np.broadcast_arrays(d, z)
        it = out.reshape(-1)
        for i, (dv, zv) in enumerate(zip(flat_d.reshape(-1), flat_z.reshape(-1))):
            it[i] = K.bilinear_eps(self.eps, self.d0, self.dd, self.z0, self.dz, float(dv), float(zv))
        return out

    @property
    def d_max(self) -> float:
        return self.d0 + (self.eps.shape[0] - 1) * self.dd


def _build_bank(g_of_y, dx: float, d_lo: float, d_hi: float, lower: float,
                dd: float = 0.05, dz: float = 0.05, label: str = "") -> KernelBank:
    """Tabulate eps(d, z) for the kernel ``phi(y - d) exp(g(y))`` (y relative to the threshold)."""
    half = KERNEL_HALF_WIDTH
    j_lo = int(math.floor((d_lo - 3 * half) / dx))
    j_hi = int(math.ceil((d_hi + 3 * half) / dx))
    y = np.arange(j_lo, j_hi + 1) * dx
    gy = g_of_y(y)
    fin = np.isfinite(gy)
    f0 = int(np.argmax(fin))
    # mode of phi(y - d) e^{g(y)} solves d = y - g'(y); invert this monotone map
    gp = np.gradient(np.where(fin, gy, 0.0), dx)
    D = np.maximum.accumulate(y[f0 + 1:] - gp[f0 + 1:])
    ds = d_lo + dd * np.arange(int(round((d_hi - d_lo) / dd)) + 1)
    ymode = np.interp(ds, D, y[f0 + 1:], left=y[f0])
    W = int(round(2 * half / dx)) + 1
    j0 = np.clip(np.round((ymode - half - y[0]) / dx).astype(np.int64), f0, y.size - W)
    zs = np.arange(-Z_MAX, Z_MAX + dz / 2, dz)
    lower_lv = ndtr(zs[zs <= 0])
    upper_lv = ndtr(-zs[zs > 0])
    eps = np.empty((ds.size, zs.size))
    cols = np.arange(W)
    for a in range(0, ds.size, 256):
        sl = slice(a, min(a + 256, ds.size))
        idx = j0[sl, None] + cols
        Y = y[idx]
        L = -0.5 * (Y - ds[sl, None]) ** 2 + gy[idx]
        cdf, sf = _cdf_tables(L, dx)
        # the untilted Gaussian on the same lattice offsets: its discretisation
        # error cancels against the tilted one, so eps vanishes with the tilt
        jg = np.round((ds[sl] - half - y[0]) / dx).astype(np.int64)
        Yg = y[0] + (jg[:, None] + cols) * dx
        cdf_g, sf_g = _cdf_tables(-0.5 * (Yg - ds[sl, None]) ** 2, dx)
        for i in range(Y.shape[0]):
            q_lo = np.interp(lower_lv, cdf[i], Y[i]) - np.interp(lower_lv, cdf_g[i], Yg[i])
            q_hi = np.interp(-upper_lv, -sf[i], Y[i]) - np.interp(-upper_lv, -sf_g[i], Yg[i])
            eps[a + i] = np.concatenate([q_lo, q_hi])
    if lower > -np.inf:
        # the kernel support starts at y = lower; keep interpolated quantiles inside
        eps = np.maximum(eps, lower - ds[:, None] - zs[None, :])
    top = np.abs(eps[-1]).max()
    if top > 1e-8:
        raise DegenerateKernelError(f"bank {label}: correction {top:.2e} at d_max is not negligible")
    eps[-1] = 0.0
    return KernelBank(eps, float(ds[0]), dd, float(zs[0]), dz, label)


def kernel_bank(table: TailTable, r: int | None) -> KernelBank:
    """Cached bank for remaining depth ``r`` (``None``: infinite-volume kernel)."""
    key = ("bank", r)
    if key not in table.cache:
        dx = table.dx
        if r is None:
            gfn = table.survival(table.n_ref)
            shift = -m(table.n_ref)
            bank = _build_bank(lambda y: gfn(shift - y), dx, -40.0, 60.0, -np.inf, label="inf")
        else:
            gfn = table.survival(r)
            top = (m(r) if r > 0 else 0.0) + 55.0
            lower = 0.0 if r == 0 else -np.inf
            bank = _build_bank(lambda y: gfn(-y), dx, -40.0, top, lower, label=f"r={r}")
        table.cache[key] = bank
    return table.cache[key]


# --- field samplers ---------------------------------------------------------------

def _scores(rng: RngStream, k: int, replicas: int, lane: int = 0) -> np.ndarray:
    """Normal scores for depth-k vertices, one row per replica (row i uses stream lane i)."""
    if replicas == 1:
        return rng.level_scores(k, lane)[None, :]
    return np.stack([rng.level_scores(k, lane + i) for i in range(replicas)])


def _fill(vals, k, z, bank: KernelBank, shift: float, floor: float | None = None):
    bad = K.fill_level(vals, k, z, bank.eps, bank.d0, bank.dd, bank.z0, bank.dz, shift)
    if bad:
        raise DegenerateKernelError(f"{bad} parents fell below the tabulated range at depth {k}")
    if floor is not None:
        ch = vals[:, level_slice(k + 1)]
        np.maximum(ch, floor, out=ch)


def sample_conditioned_batch(spec: ConditionSpec, table: TailTable, scores) -> np.ndarray:
    """Fields for ``spec`` from given per-level normal scores ``scores(k) -> (R, 2^k)``."""
    first = scores(1)
    R = first.shape[0]
    n = spec.n
    vals = np.empty((R, n_vertices(n)))
    vals[:, 0] = spec.v
    if n == 0:
        return vals
    if n > table.N:
        raise ValueError("table too shallow for this depth")
    t = spec.threshold
    for k in range(n):
        z = first if k == 0 else scores(k + 1)
        r = n - k - 1
        _fill(vals, k, z, kernel_bank(table, r), t, floor=t if r == 0 else None)
    return vals


def sample_conditioned_field(spec: ConditionSpec, table: TailTable, rng: RngStream) -> FieldSample:
    """Exact sequential draw of the field conditioned on ``min over leaves >= -m(n) + u``."""
    if not spec.finite:
        raise ValueError("use sample_infinite_up for the infinite-volume law")
    vals = sample_conditioned_batch(spec, table, lambda k: _scores(rng, k, 1))
    return FieldSample(spec.n, vals[0])


def sample_hard_wall(n: int, table: TailTable, rng: RngStream) -> FieldSample:
    """Field conditioned on all leaves being nonnegative."""
    return sample_conditioned_field(ConditionSpec.hard_wall(n), table, rng)


def rejection_oracle_hard_wall(n: int, rng: RngStream, size: int = 1, max_attempts: int = 10 ** 9,
                               chunk: int = 200_000):
    """Plain rejection: unconditioned walks kept when all leaves are >= 0.

    Returns ``(values, attempts)`` with ``values`` of shape (size, 2^(n+1)-1).
    """
    if n > 6:
        raise ValueError("rejection oracle is limited to n <= 6")
    gen = rng.generator()
    got, attempts = [], 0
    need = size
    while need > 0:
        if attempts >= max_attempts:
            raise BudgetExceededError(f"rejection oracle exceeded {max_attempts} attempts")
        b = min(chunk, max_attempts - attempts)
        vals = sample_brw_batch(n, b, 0.0, gen)
        attempts += b
        ok = vals[:, level_slice(n)].min(axis=1) >= 0.0
        acc = vals[ok][:need]
        got.append(acc)
        need -= acc.shape[0]
    return np.concatenate(got), attempts


def sample_infinite_batch(r: int, u: float, roots, table: TailTable, scores) -> np.ndarray:
    """Infinite-volume fields on T_r from given roots (array of R values)."""
    roots = np.atleast_1d(np.asarray(roots, dtype=np.float64))
    R = roots.size
    vals = np.empty((R, n_vertices(r)))
    vals[:, 0] = roots
    bank = kernel_bank(table, None)
    for k in range(r):
        _fill(vals, k, scores(k + 1), bank, u - C0 * (k + 1))
    return vals


def sample_infinite_up(r: int, u: float, v: float, table: TailTable, rng: RngStream) -> FieldSample:
    """Infinite-volume law on the first ``r`` generations, kernel ``phi * p_inf(u - c0 (k+1) - w)``."""
    vals = sample_infinite_batch(r, u, [v], table, lambda k: _scores(rng, k, 1))
    return FieldSample(r, vals[0])


# --- deterministic propagators -------------------------------------------------------

@dataclass
class DepthLaw:
    """Law of ``h(x_k)`` as a normalised log-density (or an atom when ``density`` is None)."""

    depth: int
    density: GridFn | None = None
    atom: float | None = None

    @classmethod
    def point(cls, v: float, depth: int = 0) -> "DepthLaw":
        return cls(depth, None, float(v))

    def moments(self):
        if self.density is None:
            return self.atom, 0.0
        x = self.density.x
        p = np.exp(self.density.log_values) * self.density.dx
        mu = float(np.sum(p * x))
        return mu, float(np.sum(p * (x - mu) ** 2))

    def mode(self) -> float:
        if self.density is None:
            return self.atom
        return float(self.density.x[np.argmax(self.density.log_values)])

    def mass(self) -> float:
        return float(np.exp(self.density.log_mass())) if self.density is not None else 1.0

    def cdf(self, x) -> np.ndarray:
        if self.density is None:
            return (np.asarray(x) >= self.atom).astype(float)
        cdf, _ = _cdf_tables(self.density.log_values, self.density.dx)
        return np.interp(x, self.density.x, cdf, left=0.0, right=1.0)

    def quantile(self, u) -> np.ndarray:
        if self.density is None:
            return np.full(np.shape(u), self.atom)
        return kernel_quantile(self.density, u)

    def expect(self, fn) -> float:
        x = self.density.x
        p = np.exp(self.density.log_values) * self.density.dx
        return float(np.sum(p * fn(x)))


def _log_norm_numeric(tilt: Tilt, v_idx0: int, n_out: int, dx: float, alpha: float, hint: float):
    """log int phi(w - v - alpha) tilt(w) dw on the lattice v = (v_idx0 + i) dx."""
    v_lo, v_hi = v_idx0 * dx, (v_idx0 + n_out - 1) * dx
    lo = min(v_lo, hint) - 40.0
    hi = max(v_hi, hint) + 40.0
    i_lo = int(math.floor(lo / dx))
    w = np.arange(i_lo, int(math.ceil(hi / dx)) + 1) * dx
    src = np.asarray(tilt.log_tilt(w), dtype=np.float64)
    return K.log_gauss_smooth(src, i_lo, K.QUAD, 0.0, K.QUAD, v_idx0, n_out,
                              SMOOTH_STRIDE, -alpha, dx, DROP)


def propagate_depth_law(law: DepthLaw, tilt: Tilt, dx: float, alpha: float = 0.0,
                        half_width_sd: float = 40.0, return_log_mass: bool = False):
    """One generation of the conditioned chain, on the grid.

    The child kernel ``phi(w - v - alpha) tilt(w) / Z(v)`` is normalised per
    parent (``Z`` from ``tilt.log_norm`` when given, otherwise numerically),
    so the output is the law of the next spine vertex.  With ``alpha != 0``
    the Gaussian step is drifted and the result is returned unnormalised
    together with its log mass (used for exponential moments).
    """
    mu, var = law.moments()
    centre_parent = law.mode()

    def child_log(w):
        return -0.5 * (np.asarray(w) - centre_parent - alpha) ** 2 + tilt.log_tilt(w)

    centre = _mode_search(child_log, centre_parent + alpha, dx, tilt.lower)
    half = max(KERNEL_HALF_WIDTH, half_width_sd * math.sqrt(var + 1.0))
    lo = centre - half
    if tilt.lower > -np.inf:
        lo = max(lo, tilt.lower)
    i_lo = int(math.ceil(lo / dx - 1e-9))
    n_out = int(math.floor((centre + half) / dx)) - i_lo + 1
    w = (i_lo + np.arange(n_out)) * dx
    lt = np.asarray(tilt.log_tilt(w), dtype=np.float64)
    if law.density is None:
        v0 = law.atom
        if tilt.log_norm is not None and alpha == 0.0:
            lz = float(tilt.log_norm(v0))
        else:
            lz = float(_log_norm_numeric(tilt, int(round(v0 / dx)), 1, dx, alpha, centre)[0])
        f = -0.5 * (w - v0 - alpha) ** 2 - 0.5 * math.log(2 * math.pi) + lt - lz
    else:
        d = law.density
        if tilt.log_norm is not None and alpha == 0.0:
            lz = np.asarray(tilt.log_norm(d.x), dtype=np.float64)
        else:
            lz = _log_norm_numeric(tilt, d.i0, d.log_values.size, dx, alpha, centre)
        g = d.log_values - lz
        g = np.where(np.isfinite(d.log_values), g, -np.inf)
        conv = K.log_gauss_smooth(g, d.i0, K.ZERO, -np.inf, K.ZERO, i_lo, n_out,
                                  SMOOTH_STRIDE, alpha, dx, DROP)
        f = conv + lt
    f = np.where(np.isnan(f), -np.inf, f)
    out = GridFn(i_lo, dx, f)
    lm = out.log_mass()
    if not np.isfinite(lm):
        raise DegenerateKernelError("propagated law has no mass")
    top = np.max(f)
    edge = max(f[0] if tilt.lower == -np.inf else -np.inf, f[-1])
    if edge > top - 30.0:
        raise WindowEscapeError("propagated law reaches the window edge")
    # trim negligible ends to keep later windows small
    keep = np.nonzero(f > top - 745.0)[0]
    a, b = int(keep[0]), int(keep[-1]) + 1
    trimmed = GridFn(i_lo + a, dx, f[a:b] - (0.0 if return_log_mass else lm))
    new = DepthLaw(law.depth + 1, trimmed)
    if return_log_mass:
        return new, lm
    return new


def spine_law(spec: ConditionSpec, k: int, table: TailTable, dx: float | None = None) -> DepthLaw:
    """Law of ``h(x_k)`` along a spine of ``spec`` (finite or infinite volume)."""
    dx = table.dx if dx is None else dx
    law = DepthLaw.point(spec.v)
    for j in range(k):
        if spec.finite:
            tilt = finite_tilt(table, spec.n - j - 1, spec.threshold)
        else:
            tilt = infinite_tilt(table, spec.level(j + 1))
        law = propagate_depth_law(law, tilt, dx)
    return law


# --- the limiting local law ---------------------------------------------------------

@dataclass
class PlusDeltaLaw:
    """Root law of the limiting local field, built at approximation depth ``k_used``."""

    delta: float
    k_used: int
    root_law: DepthLaw
    gap: float | None = None
    gap_k: int | None = None


def build_plus_delta(delta: float, k: int, table: TailTable, report_gap: bool = False,
                     gap_step: int = 2) -> PlusDeltaLaw:
    """Start at ``-c0 2^(k+delta)`` under level ``c0 k`` and propagate ``k`` generations."""
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    if k < 1:
        raise ValueError("k must be positive")
    key = ("plus_delta", round(delta, 12), k)
    if key not in table.cache:
        spec = ConditionSpec(None, C0 * k, -C0 * 2.0 ** (k + delta))
        table.cache[key] = spine_law(spec, k, table)
    root = table.cache[key]
    pd = PlusDeltaLaw(float(delta), int(k), DepthLaw(0, root.density))
    if report_gap:
        pd.gap = plus_delta_gap(delta, k, table, gap_step)
        pd.gap_k = k + gap_step
    return pd


def wasserstein_laws(a: DepthLaw, b: DepthLaw, p: float = 1.0) -> float:
    """W_p between two grid laws via their quantile functions."""
    lv = (np.arange(20000) + 0.5) / 20000
    qa, qb = a.quantile(lv), b.quantile(lv)
    if p == 1.0:
        xa, xb = a.density.x, b.density.x
        lo, hi = min(xa[0], xb[0]), max(xa[-1], xb[-1])
        dx = min(a.density.dx, b.density.dx)
        x = np.arange(lo, hi + dx, dx)
        return float(np.sum(np.abs(a.cdf(x) - b.cdf(x))) * dx)
    return float(np.mean(np.abs(qa - qb) ** p) ** (1.0 / p))


def plus_delta_gap(delta: float, k: int, table: TailTable, step: int = 2) -> float:
    a = build_plus_delta(delta, k, table).root_law
    b = build_plus_delta(delta, k + step, table).root_law
    return wasserstein_laws(a, b)


def sample_plus_delta_field(pd: PlusDeltaLaw, r: int, table: TailTable, rng: RngStream) -> FieldSample:
    """Root from ``pd.root_law`` (inverse CDF at the root's uniform), then level-0 infinite volume."""
    root = float(pd.root_law.quantile(rng.uniforms(0, 1))[0])
    vals = sample_infinite_batch(r, 0.0, [root], table, lambda k: _scores(rng, k, 1))
    return FieldSample(r, vals[0])


# --- exponential moments and rate constants -----------------------------------------

@dataclass
class AlphaCurve:
    """``A_alpha(u)`` on a grid of u, from the backward value recursion at depth ``n_spine``."""

    alpha: float
    n_spine: int
    u: np.ndarray
    log_a: np.ndarray
    gap: float | None = None

    def __call__(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.alpha == 0.0:
            return np.ones_like(u)[()]
        if np.any((u < self.u[0]) | (u > self.u[-1])):
            raise ValueError("u outside the tabulated range of A_alpha")
        return np.exp(np.interp(u, self.u, self.log_a))[()]


def _alpha_curve_raw(alpha: float, table: TailTable, n: int, u_max: float, dx: float):
    """Backward recursion for ``W_k(v) = E[exp(alpha (h_n - h_k) - (n-k) alpha^2/2) | h_k = v]``.

    With threshold ``t = -m(n)`` the root value ``v`` plays the role of ``-u``:
    ``A_alpha(u) = W_0(-u)``.
    """
    t = -m(n)
    lo = -u_max - 40.0
    hi = u_max + (alpha + 0.5) * n + 40.0
    i_lo = int(math.floor(lo / dx))
    npts = int(math.ceil(hi / dx)) - i_lo + 1
    v = (i_lo + np.arange(npts)) * dx
    logW = np.zeros(npts)
    for k in range(n - 1, -1, -1):
        r = n - k - 1
        lt = table.log_S(r, t - v)
        src = lt + logW
        conv = K.log_gauss_smooth(src, i_lo, K.QUAD, 0.0, K.QUAD if r > 0 else K.ZERO,
                                  i_lo, npts, SMOOTH_STRIDE if r > 0 else 1, -alpha, dx, DROP)
        logW = conv - 0.5 * table.log_S(r + 1, t - v)
    sel = (v >= -u_max - 1e-9) & (v <= u_max + 1e-9)
    return -v[sel][::-1], logW[sel][::-1]


def alpha_curve(alpha: float, table: TailTable, n_spine: int = 64, u_max: float = 45.0,
                dx: float = 0.02, report_gap: bool = True) -> AlphaCurve:
    key = ("alpha", round(alpha, 12), n_spine, u_max, dx)
    if key not in table.cache:
        if alpha == 0.0:
            u = np.array([-u_max, u_max])
            curve = AlphaCurve(0.0, n_spine, u, np.zeros(2), 0.0)
        else:
            u, la = _alpha_curve_raw(alpha, table, n_spine, u_max, dx)
            curve = AlphaCurve(float(alpha), n_spine, u, la)
            if report_gap:
                uh, lh = _alpha_curve_raw(alpha, table, n_spine // 2, u_max, dx)
                sel = np.abs(u) <= 3.0
                curve.gap = float(np.max(np.abs(np.exp(la[sel]) - np.exp(np.interp(u[sel], uh, lh)))))
        table.cache[key] = curve
    return table.cache[key]


def a_alpha(u, alpha: float, table: TailTable, n_spine: int = 64):
    """``lim E^{up u}[exp(alpha h(x_n) - n alpha^2 / 2)]`` evaluated at depth ``n_spine``."""
    if alpha == 0.0:
        return np.ones_like(np.asarray(u, dtype=np.float64))[()]
    return alpha_curve(alpha, table, n_spine)(u)


def a_alpha_delta(pd: PlusDeltaLaw, alpha: float, table: TailTable, n_spine: int = 64) -> float:
    """``E[exp(alpha h(0)) A_alpha(-h(0))]`` against the root law."""
    if alpha == 0.0:
        return 1.0
    curve = alpha_curve(alpha, table, n_spine)
    d = pd.root_law.density
    x = d.x
    inside = (-x >= curve.u[0]) & (-x <= curve.u[-1])
    logp = d.log_values[inside]
    if np.any(np.exp(d.log_values[~inside]) > 1e-300):
        if np.max(d.log_values[~inside]) > -200:
            raise ValueError("root law extends beyond the A_alpha grid")
    logint = logp + alpha * x[inside] + np.log(curve(-x[inside]))
    top = logint.max()
    return float(np.exp(top) * np.sum(np.exp(logint - top)) * d.dx)


def kappa(pd: PlusDeltaLaw, table: TailTable) -> float:
    """Rate constant ``-2^-delta E[(log p_inf)'(-h(0))]`` of the scaled minimum."""
    d = pd.root_law.density
    x = d.x
    w = np.exp(d.log_values) * d.dx
    keep = w > 1e-300
    deriv = log_deriv_p(table, None, -x[keep])
    return float(-(2.0 ** -pd.delta) * np.sum(w[keep] * deriv))


def maximum_centering(n: int, table: TailTable, k: int = 10, n_spine: int = 64) -> dict:
    """Centring of the leaf maximum under the hard wall, with its ingredients.

    ``2 m(n') + (l ln 2 + ln l + ln A + ln C_0 - ln c0 + ln ln 2) / c0`` where
    ``A`` is the critical exponential moment of the limiting local law and
    ``C_0`` the left-tail constant ``1 - p_inf(-v) ~ C_0 v e^(-c0 v)``.
    """
    ln = l(n)
    if ln < 1:
        raise ValueError("n must be at least 2")
    pd = build_plus_delta(frac2(n), k, table)
    a_crit = a_alpha_delta(pd, C0, table, n_spine)
    c_tail, _ = estimate_left_tail_constant(table)
    shift = (ln * math.log(2.0) + math.log(ln) + math.log(a_crit)
             + math.log(c_tail) - math.log(C0) + math.log(math.log(2.0))) / C0
    return {"m_plus": 2.0 * m(nprime(n)) + shift, "a_c0_delta": a_crit, "tail_constant": c_tail}
