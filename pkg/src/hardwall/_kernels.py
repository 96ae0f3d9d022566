"""Compiled inner loops (numba).

The smoother evaluates ``log sum_z h*phi(z - shift)*exp(f(x - z))`` for every
output lattice point ``x``.  All arrays live on a common lattice of spacing
``dx``; positions are integer lattice indices.  Each output point is
rescaled around the mode of its own integrand, so values far in the tails
(log-values of -1e5 and below) keep full relative precision.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# extrapolation modes outside the tabulated window
CONST, QUAD, ZERO = 0, 1, 2


@njit(cache=True)
def _edge_coeffs(f, n, side):
    # value, first and second one-sided differences at an edge (index units)
    if side == 0:
        a, b1, b2 = f[0], f[1], f[2]
    else:
        a, b1, b2 = f[n - 1], f[n - 2], f[n - 3]
    if not (np.isfinite(a) and np.isfinite(b1) and np.isfinite(b2)):
        return a, 0.0, 0.0, False
    slope = (3.0 * a - 4.0 * b1 + b2) / 2.0
    curv = a - 2.0 * b1 + b2
    return a, slope, curv, True


@njit(cache=True)
def _src_value(f, n, p, lmode, lval, la, lb, lc, rmode, ra, rb, rc):
    if p < 0:
        if lmode == CONST:
            return lval
        if lmode == ZERO:
            return NEG_INF
        t = -p
        return la + lb * t + 0.5 * lc * t * t
    if p >= n:
        if rmode == ZERO:
            return NEG_INF
        if rmode == CONST:
            return f[n - 1]
        t = p - (n - 1)
        return ra + rb * t + 0.5 * rc * t * t
    return f[p]


@njit(cache=True)
def log_gauss_smooth(f, src_start, lmode, lval, rmode, out_start, out_n, stride, shift, dx, drop):
    """Log-domain Gaussian smoothing on a lattice.

    ``f`` holds log-values at lattice indices ``src_start + p``.  Returns
    ``out[i] = log int phi(z - shift) exp(f(x_i - z)) dz`` for the lattice
    indices ``out_start + i``, using a uniform rule with spacing
    ``stride*dx`` anchored at the integrand mode.
    """
    n = f.shape[0]
    out = np.empty(out_n)
    la = lb = lc = 0.0
    ra = rb = rc = 0.0
    if lmode == QUAD:
        la, lb, lc, ok = _edge_coeffs(f, n, 0)
        if not ok:
            lmode = ZERO
        elif lc > 0.0:
            lc = 0.0
    if rmode == QUAD:
        ra, rb, rc, ok = _edge_coeffs(f, n, 1)
        if not ok:
            rmode = ZERO
        elif rc > 0.0:
            rc = 0.0
    # finite support of the source in p
    pf = -(1 << 60)
    pl = 1 << 60
    if lmode == ZERO:
        pf = 0
        while pf < n and not np.isfinite(f[pf]):
            pf += 1
    if rmode == ZERO:
        pl = n - 1
        while pl >= 0 and not np.isfinite(f[pl]):
            pl -= 1
    if lmode == ZERO or rmode == ZERO:
        if pf > pl:
            out[:] = NEG_INF
            return out
    off = out_start - src_start
    c = int(round(shift / dx))
    lw = math.log(stride * dx) - _HALF_LOG_2PI
    for i in range(out_n):
        # admissible offsets c: p = off + i - c within [pf, pl]
        cmin = off + i - pl
        cmax = off + i - pf
        if c < cmin:
            c = cmin
        if c > cmax:
            c = cmax
        z = c * dx - shift
        g0 = -0.5 * z * z + _src_value(f, n, off + i - c, lmode, lval, la, lb, lc, rmode, ra, rb, rc)
        # gallop towards the mode, then refine by halving
        step = 1
        direction = 0
        if c + 1 <= cmax:
            z = (c + 1) * dx - shift
            g1 = -0.5 * z * z + _src_value(f, n, off + i - c - 1, lmode, lval, la, lb, lc, rmode, ra, rb, rc)
            if g1 > g0:
                direction = 1
        if direction == 0 and c - 1 >= cmin:
            z = (c - 1) * dx - shift
            g1 = -0.5 * z * z + _src_value(f, n, off + i - c + 1, lmode, lval, la, lb, lc, rmode, ra, rb, rc)
            if g1 > g0:
                direction = -1
        if direction != 0:
            while True:
                cn = c + direction * step
                if cn < cmin or cn > cmax:
                    break
                z = cn * dx - shift
                gn = -0.5 * z * z + _src_value(f, n, off + i - cn, lmode, lval, la, lb, lc, rmode, ra, rb, rc)
                if gn > g0:
                    c = cn
                    g0 = gn
                    step *= 2
                else:
                    break
            while step > 1:
                step //= 2
                for sgn in (1, -1):
                    cn = c + sgn * step
                    if cn < cmin or cn > cmax:
                        continue
                    z = cn * dx - shift
                    gn = -0.5 * z * z + _src_value(f, n, off + i - cn, lmode, lval, la, lb, lc, rmode, ra, rb, rc)
                    if gn > g0:
                        c = cn
                        g0 = gn
                        break
        if not np.isfinite(g0):
            out[i] = NEG_INF
            continue
        total = 1.0
        for sgn in (1, -1):
            k = 1
            while True:
                cn = c + sgn * k * stride
                if cn < cmin or cn > cmax:
                    break
                z = cn * dx - shift
                g = -0.5 * z * z + _src_value(f, n, off + i - cn, lmode, lval, la, lb, lc, rmode, ra, rb, rc)
                if g < g0 - drop:
                    break
                total += math.exp(g - g0)
                k += 1
        out[i] = g0 + math.log(total) + lw
    return out


@njit(cache=True)
def bilinear_eps(eps, d0, dd, z0, dz, d, z):
    """Bilinear lookup of a quantile-correction table; zero beyond the top row."""
    nd, nz = eps.shape
    fd = (d - d0) / dd
    if fd >= nd - 1:
        return 0.0
    if fd < 0.0:
        return np.nan
    fz = (z - z0) / dz
    if fz < 0.0:
        fz = 0.0
    elif fz > nz - 1.000001:
        fz = nz - 1.000001
    i = int(fd)
    j = int(fz)
    ad = fd - i
    az = fz - j
    return ((1.0 - ad) * ((1.0 - az) * eps[i, j] + az * eps[i, j + 1])
            + ad * ((1.0 - az) * eps[i + 1, j] + az * eps[i + 1, j + 1]))


@njit(cache=True)
def fill_level(vals, k, z, eps, d0, dd, z0, dz, shift):
    """Children at depth k+1 from parents at depth k (rows are replicas).

    child = parent + z + eps(parent - shift, z).  Returns the number of
    parents that fell below the table range (their children are NaN).
    """
    R = vals.shape[0]
    p0 = (1 << k) - 1
    c0 = (1 << (k + 1)) - 1
    npar = 1 << k
    bad = 0
    for r in range(R):
        for a in range(npar):
            v = vals[r, p0 + a]
            for s in range(2):
                zz = z[r, 2 * a + s]
                e = bilinear_eps(eps, d0, dd, z0, dz, v - shift, zz)
                if e != e:
                    bad += 1
                vals[r, c0 + 2 * a + s] = v + zz + e
    return bad


@njit(cache=True)
def fill_level_coupled(h, hup, k, z, eps, d0, dd, z0, dz, shift):
    """Quantile-coupled children: h gets parent + z, hup its conditioned quantile."""
    R = h.shape[0]
    p0 = (1 << k) - 1
    c0 = (1 << (k + 1)) - 1
    npar = 1 << k
    bad = 0
    for r in range(R):
        for a in range(npar):
            v = h[r, p0 + a]
            w = hup[r, p0 + a]
            for s in range(2):
                zz = z[r, 2 * a + s]
                e = bilinear_eps(eps, d0, dd, z0, dz, w - shift, zz)
                if e != e:
                    bad += 1
                h[r, c0 + 2 * a + s] = v + zz
                hup[r, c0 + 2 * a + s] = w + zz + e
    return bad
