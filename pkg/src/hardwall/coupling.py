"""Quantile coupling of a conditioned field with a plain branching random walk.

Both fields are driven by the same per-vertex normal score ``z``: the walk
steps by ``z`` and the conditioned field steps to the ``Phi(z)``-quantile of
its child kernel.  The difference ``eta = h_up - h`` then has gradient

    eta(child) - eta(parent) = eps(h_up(parent) - level, z),

which vanishes wherever the conditioning is inactive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .conditioned_sampler import ConditionSpec, KernelBank, PlusDeltaLaw, _scores, kernel_bank
from .core_field import C0, FieldSample, RngStream, level_slice, n_vertices
from .errors import DegenerateKernelError, EmptyBatchError

__all__ = [
    "CoupledTriple",
    "GradientStats",
    "coupled_child_step",
    "sample_coupled_batch",
    "sample_coupled_field",
    "gradient_norms",
    "gradient_decay",
    "eta_infinity",
]


@dataclass
class CoupledTriple:
    """Walk ``h``, conditioned field ``h_up`` and their difference, heap ordered.

    Arrays may carry a leading replica axis.
    """

    depth_n: int
    h: np.ndarray
    h_up: np.ndarray

    @property
    def eta(self) -> np.ndarray:
        return self.h_up - self.h

    def walk(self) -> FieldSample:
        return FieldSample(self.depth_n, self.h)

    def conditioned(self) -> FieldSample:
        return FieldSample(self.depth_n, self.h_up)

    def grad_eta(self, k: int) -> np.ndarray:
        """``eta(x) - eta(parent(x))`` for the depth-``k`` vertices (k >= 1)."""
        e = self.eta
        ch = e[..., level_slice(k)]
        par = e[..., level_slice(k - 1)]
        return ch - np.repeat(par, 2, axis=-1)


def coupled_child_step(h_parent, hup_parent, z, bank: KernelBank, level: float):
    """One coupled step from given parents and scores (vectorised)."""
    h_parent = np.asarray(h_parent, dtype=np.float64)
    hup_parent = np.asarray(hup_parent, dtype=np.float64)
    e = bank(hup_parent - level, z)
    if np.isnan(e).any():
        raise DegenerateKernelError("parent below the tabulated kernel range")
    return h_parent + z, hup_parent + z + e


def _run(h, hup, r, z_of, bank_of, level_of, floor_of=None):
    for k in range(r):
        bank = bank_of(k)
        lev = level_of(k)
        bad = K.fill_level_coupled(h, hup, k, z_of(k + 1), bank.eps, bank.d0, bank.dd,
                                   bank.z0, bank.dz, lev)
        if bad:
            raise DegenerateKernelError(f"{bad} parents fell below the tabulated range at depth {k}")
        if floor_of is not None:
            fl = floor_of(k)
            if fl is not None:
                ch = hup[:, level_slice(k + 1)]
                np.maximum(ch, fl, out=ch)


def sample_coupled_batch(source, r: int, table, scores, root_uniforms=None) -> CoupledTriple:
    """Coupled triples on ``T_r`` for ``R`` replicas; ``scores(k)`` gives (R, 2^k) normal scores.

    ``source`` is a finite ``ConditionSpec`` (then ``r`` must equal its depth),
    an infinite-volume ``ConditionSpec`` or a ``PlusDeltaLaw``.  For the last,
    the walk starts at 0 and the conditioned root is drawn from the root law
    at ``root_uniforms`` (one per replica).
    """
    first = scores(1) if r > 0 else None
    if isinstance(source, PlusDeltaLaw):
        if root_uniforms is None:
            raise ValueError("root uniforms are required for the limiting law")
        roots_up = source.root_law.quantile(np.asarray(root_uniforms))
        roots = np.zeros_like(roots_up)
        u = 0.0
    else:
        R = first.shape[0] if first is not None else 1
        roots = np.full(R, source.v)
        roots_up = roots.copy()
        u = source.u
    R = roots.size
    h = np.empty((R, n_vertices(r)))
    hup = np.empty_like(h)
    h[:, 0] = roots
    hup[:, 0] = roots_up

    def z_of(k):
        return first if k == 1 else scores(k)

    if isinstance(source, ConditionSpec) and source.finite:
        if r != source.n:
            raise ValueError("finite coupling runs over the whole tree")
        t = source.threshold
        _run(h, hup, r, z_of, lambda k: kernel_bank(table, r - k - 1), lambda k: t,
             lambda k: t if k == r - 1 else None)
    else:
        bank = kernel_bank(table, None)
        _run(h, hup, r, z_of, lambda k: bank, lambda k: u - C0 * (k + 1))
    return CoupledTriple(r, h, hup)


def sample_coupled_field(source, r: int, table, rng: RngStream) -> CoupledTriple:
    """A single coupled triple driven by ``rng`` (root uniform is index 0)."""
    ru = rng.uniforms(0, 1) if isinstance(source, PlusDeltaLaw) else None
    tr = sample_coupled_batch(source, r, table, lambda k: _scores(rng, k, 1), ru)
    return CoupledTriple(r, tr.h[0], tr.h_up[0])


@dataclass
class GradientStats:
    """Mean ``|grad eta|`` per depth and the fitted log-linear decay slope."""

    depths: np.ndarray
    mean_abs: np.ndarray
    se: np.ndarray
    slope: float
    intercept: float


def gradient_norms(triple: CoupledTriple, p: float = 1.0) -> np.ndarray:
    """Per-replica mean of ``|grad eta|^p`` over each depth 1..r, shape (R, r)."""
    out = []
    for k in range(1, triple.depth_n + 1):
        g = np.abs(triple.grad_eta(k)) ** p
        out.append(np.atleast_2d(g).mean(axis=-1))
    return np.stack(out, axis=-1)


def gradient_decay(norms: np.ndarray, lo: int = 2, hi: int | None = None) -> GradientStats:
    """Fit ``log E|grad eta(x_k)| = a + slope k`` over depths lo..hi from per-replica norms."""
    norms = np.atleast_2d(norms)
    if norms.shape[0] == 0:
        raise EmptyBatchError("no replicas")
    hi = norms.shape[1] if hi is None else hi
    depths = np.arange(1, norms.shape[1] + 1)
    mean = norms.mean(axis=0)
    se = norms.std(axis=0, ddof=1) / np.sqrt(norms.shape[0]) if norms.shape[0] > 1 else np.zeros_like(mean)
    sel = (depths >= lo) & (depths <= hi) & (mean > 0)
    slope, intercept = np.polyfit(depths[sel], np.log(mean[sel]), 1)
    return GradientStats(depths, mean, se, float(slope), float(intercept))


def eta_infinity(triple: CoupledTriple) -> np.ndarray:
    """Deepest available proxy for the fixation value: ``eta`` at the leaves."""
    return triple.eta[..., level_slice(triple.depth_n)]
