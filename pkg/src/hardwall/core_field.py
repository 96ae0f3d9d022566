"""Tree geometry, centering constants and unconditional branching random walk sampling.

Fields on the depth-n binary tree are stored as flat heap-ordered arrays: the
root has index 0 and the children of vertex ``i`` are ``2i+1`` and ``2i+2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "C0",
    "m",
    "l",
    "nprime",
    "frac2",
    "mu_profile",
    "depth",
    "parent",
    "child",
    "ancestor",
    "level_slice",
    "n_vertices",
    "common_ancestor_depth",
    "ball",
    "FieldSample",
    "RngStream",
    "sample_brw",
    "sample_brw_batch",
    "leaf_min",
    "leaf_max",
    "population_mean",
]

C0 = math.sqrt(2.0 * math.log(2.0))


def m(n: int) -> float:
    """Centering of the leaf extremes: ``c0 n - 1.5 ln(n) / c0``."""
    if n < 1:
        raise ValueError("m(n) needs n >= 1")
    return C0 * n - 1.5 * math.log(n) / C0


def l(n: int) -> int:
    """``floor(log2 n)``, computed exactly on integers."""
    if n < 1:
        raise ValueError("l(n) needs n >= 1")
    return int(n).bit_length() - 1


def nprime(n: int) -> int:
    return n - l(n)


def frac2(n: int) -> float:
    """Fractional part of ``log2 n``, always in [0, 1)."""
    return math.log2(n) - l(n)


def mu_profile(n: int, k: int) -> float:
    """Mean height profile of the hard-wall field at depth ``k``."""
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    top = m(nprime(n))
    if k < l(n):
        return top * (1.0 - 2.0 ** (-k))
    return top


# --- heap index algebra -----------------------------------------------------

def depth(index):
    """Depth of a heap index (vectorised): ``floor(log2(index + 1))``."""
    if np.ndim(index) == 0:
        return (int(index) + 1).bit_length() - 1
    idx = np.asarray(index, dtype=np.int64) + 1
    return np.frexp(idx.astype(np.float64))[1].astype(np.int64) - 1


def parent(index):
    return (np.asarray(index) - 1) // 2 if np.ndim(index) else (int(index) - 1) // 2


def child(index, side: int):
    """``side`` 0 is the left child, 1 the right child."""
    return 2 * np.asarray(index) + 1 + side if np.ndim(index) else 2 * int(index) + 1 + side


def ancestor(index, k: int):
    """Depth-``k`` ancestor of ``index`` (the vertex itself when k equals its depth)."""
    d = depth(index)
    shift = np.asarray(d) - k
    if np.any(shift < 0):
        raise ValueError("ancestor depth exceeds vertex depth")
    out = ((np.asarray(index) + 1) >> shift) - 1
    return int(out) if np.ndim(index) == 0 else out


def level_slice(k: int) -> slice:
    """Heap slice of the 2^k vertices at depth ``k``."""
    return slice((1 << k) - 1, (1 << (k + 1)) - 1)


def n_vertices(n: int) -> int:
    return (1 << (n + 1)) - 1


def common_ancestor_depth(i: int, j: int) -> int:
    """Depth of the deepest common ancestor of two heap indices."""
    di, dj = depth(i), depth(j)
    a, b = int(i) + 1, int(j) + 1
    if di > dj:
        a >>= di - dj
    else:
        b >>= dj - di
    while a != b:
        a >>= 1
        b >>= 1
    return a.bit_length() - 1


def ball(index: int, radius: int, n: int) -> np.ndarray:
    """Heap indices within graph distance ``radius`` of ``index`` inside ``T_n``.

    The order is canonical (by steps up, then by the descent below the
    off-path child, left to right), so balls around different vertices of
    the same depth correspond vertex by vertex.
    """
    d = depth(index)
    out = [int(index)]
    # descendants of the vertex itself
    for t in range(1, min(radius, n - d) + 1):
        first = ((int(index) + 1) << t) - 1
        out.extend(range(first, first + (1 << t)))
    cur = int(index)
    for j in range(1, min(radius, d) + 1):
        up = (cur - 1) // 2
        out.append(up)
        off = cur + 1 if cur % 2 == 1 else cur - 1
        for t in range(0, min(radius - j - 1, n - depth(off)) + 1):
            first = ((off + 1) << t) - 1
            out.extend(range(first, first + (1 << t)))
        cur = up
    return np.asarray(out, dtype=np.int64)


# --- samples and randomness -------------------------------------------------

@dataclass
class FieldSample:
    """One realisation on the depth-``depth_n`` tree, heap ordered."""

    depth_n: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[-1] != n_vertices(self.depth_n):
            raise ValueError("values length does not match depth")

    @property
    def leaves(self) -> np.ndarray:
        return self.values[..., level_slice(self.depth_n)]

    def level(self, k: int) -> np.ndarray:
        return self.values[..., level_slice(k)]


_TWO_M53 = 2.0 ** -53


class RngStream:
    """Counter-based random source keyed by ``(seed, stream_id)``.

    Every vertex owns one uniform: the uniform of heap index ``i`` is the
    ``i``-th output of a Philox stream, so any index range can be generated
    on its own (``Philox.advance`` jumps the counter) and reproduced exactly.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id])
        self._key = ss.generate_state(2, dtype=np.uint64)

    def _bitgen(self, lane: int) -> np.random.Philox:
        key = self._key.copy()
        key[1] ^= np.uint64((int(lane) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF)
        return np.random.Philox(key=key)

    def uniforms(self, start: int, count: int, lane: int = 0) -> np.ndarray:
        """Uniforms in (0, 1) for indices ``start .. start+count-1``."""
        bg = self._bitgen(lane)
        block, rem = divmod(int(start), 4)
        if block:
            bg.advance(block)
        raw = bg.random_raw(rem + int(count))[rem:]
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53

    def normal_scores(self, start: int, count: int, lane: int = 0) -> np.ndarray:
        """Standard normal scores ``Phi^{-1}(U)`` of the per-index uniforms."""
        return ndtri(self.uniforms(start, count, lane))

    def level_scores(self, k: int, lane: int = 0) -> np.ndarray:
        sl = level_slice(k)
        return self.normal_scores(sl.start, sl.stop - sl.start, lane)

    def generator(self, lane: int = 0) -> np.random.Generator:
        """A sequential numpy Generator for auxiliary draws."""
        return np.random.Generator(self._bitgen(lane + 1_000_003))

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


def sample_brw(n: int, root_value: float, rng: RngStream) -> FieldSample:
    """Branching random walk: every child is its parent plus an independent N(0,1)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    vals = np.empty(n_vertices(n))
    vals[0] = root_value
    if n:
        z = rng.normal_scores(1, n_vertices(n) - 1)
        for k in range(n):
            par = vals[level_slice(k)]
            ch = level_slice(k + 1)
            vals[ch] = np.repeat(par, 2) + z[ch.start - 1:ch.stop - 1]
    return FieldSample(n, vals)


def sample_brw_batch(n: int, replicas: int, root_value: float, gen: np.random.Generator) -> np.ndarray:
    """Many small BRW fields at once, shape ``(replicas, 2^(n+1)-1)``."""
    vals = np.empty((replicas, n_vertices(n)))
    vals[:, 0] = root_value
    for k in range(n):
        ch = level_slice(k + 1)
        vals[:, ch] = np.repeat(vals[:, level_slice(k)], 2, axis=1) + gen.standard_normal((replicas, 1 << (k + 1)))
    return vals


def leaf_min(f: FieldSample):
    return f.leaves.min(axis=-1)


def leaf_max(f: FieldSample):
    return f.leaves.max(axis=-1)


def population_mean(f: FieldSample):
    return f.leaves.mean(axis=-1)
