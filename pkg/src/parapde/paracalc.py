"""Bony paraproducts, the time-mollified paraproduct, commutators and localization.

All products of blocks are formed on a 2x zero-padded grid and projected
back, so the three Bony pieces add up to the dealiased product exactly.
Array-level kernels act elementwise on any leading axes (time, components);
the Field-level wrappers accept :class:`Field` or :class:`SpaceTimeField`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from .errors import ContractError, RangeError, ShapeError
from .spectral_core import (
    Field,
    Grid,
    SpaceTimeField,
    _wrap,
    dealiased_product,
    fft,
    get_partition,
    ifft,
    low_profile,
    pad_to_fine,
    truncate_from_fine,
)

__all__ = [
    "bony_parts",
    "paraproduct",
    "para_lower",
    "resonant",
    "modified_paraproduct",
    "para_lower_mod",
    "time_mollifier_weights",
    "time_mollify",
    "commutator",
    "commutator_arrays",
    "LocalizationPlan",
    "localize",
    "localize_arrays",
    "SpaceTimeField",
]


# ----------------------------------------------------------------------------
# Bony decomposition
# ----------------------------------------------------------------------------


def _fine_blocks(grid: Grid, a: np.ndarray) -> np.ndarray:
    """Padded real-space blocks of ``a``: shape ``(J, *lead, *(2N,)*dim)``."""
    part = get_partition(grid)
    c = fft(grid, a)
    mult = part.multipliers.reshape((part.n_blocks,) + (1,) * (c.ndim - grid.dim) + grid.rshape)
    return pad_to_fine(grid, mult * c[None])


def bony_parts(grid: Grid, a: np.ndarray, b: np.ndarray, parts=("lower", "resonant", "upper")) -> dict:
    """Array-level Bony decomposition of ``a * b``.

    Returns a dict with the requested entries among ``lower`` (``a < b``),
    ``resonant`` (``a o b``) and ``upper`` (``a > b``).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[a.ndim - grid.dim:] != grid.shape or b.shape[b.ndim - grid.dim:] != grid.shape:
        raise ShapeError("operands do not live on the grid")
    A = _fine_blocks(grid, a)
    B = _fine_blocks(grid, b)
    J = A.shape[0]
    out = {}
    if "lower" in parts:
        acc = 0.0
        low = 0.0
        for j in range(2, J):
            low = low + A[j - 2]
            acc = acc + low * B[j]
        out["lower"] = _project(grid, acc, a, b)
    if "upper" in parts:
        acc = 0.0
        low = 0.0
        for j in range(2, J):
            low = low + B[j - 2]
            acc = acc + A[j] * low
        out["upper"] = _project(grid, acc, a, b)
    if "resonant" in parts:
        acc = 0.0
        for j in range(J):
            s = B[j]
            if j > 0:
                s = s + B[j - 1]
            if j + 1 < J:
                s = s + B[j + 1]
            acc = acc + A[j] * s
        out["resonant"] = _project(grid, acc, a, b)
    return out


def _project(grid: Grid, fine, a, b) -> np.ndarray:
    if np.isscalar(fine):
        shape = np.broadcast_shapes(a.shape, b.shape)
        return np.zeros(shape)
    return ifft(grid, truncate_from_fine(grid, fine))


def _pair(f, g):
    if type(f) is not type(g) or f.grid != g.grid:
        raise ShapeError("paraproduct operands must share type and grid")
    if isinstance(f, SpaceTimeField) and not np.array_equal(f.times, g.times):
        raise ShapeError("space-time operands must share the time grid")
    return f.grid


def paraproduct(f, g):
    """Return ``(f < g, f o g, f > g)`` as fields of the input type."""
    grid = _pair(f, g)
    d = bony_parts(grid, f.values, g.values)
    return _wrap(f, d["lower"]), _wrap(f, d["resonant"]), _wrap(f, d["upper"])


def para_lower(grid: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a < b`` at array level."""
    return bony_parts(grid, a, b, ("lower",))["lower"]


def resonant(grid: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a o b`` at array level."""
    return bony_parts(grid, a, b, ("resonant",))["resonant"]


# ----------------------------------------------------------------------------
# time mollification and the modified paraproduct
# ----------------------------------------------------------------------------


def _bump(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    out = np.zeros_like(s)
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@lru_cache(maxsize=256)
def time_mollifier_weights(j: int, dt: float) -> np.ndarray:
    """Discrete weights of ``Q_j`` on a uniform grid, offsets ``-n..n``.

    Trapezoidal samples of ``2^{2j} Q(2^{2j} s)`` renormalized to unit mass.
    When the kernel support ``2^{-2j}`` is below ``dt`` only the centre node
    survives and ``Q_j`` is the identity.
    """
    width = 2.0 ** (-2 * j)
    n = int(np.floor(width / dt))
    if n == 0:
        return np.ones(1)
    s = np.arange(-n, n + 1) * dt / width
    w = _bump(s)
    if w.sum() <= 0:
        return np.ones(1)
    w = w / w.sum()
    w.setflags(write=False)
    return w


def time_mollify(a: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Convolve along axis 0 with clamped (edge-replicated) boundaries."""
    n = (weights.size - 1) // 2
    if n == 0:
        return a
    M1 = a.shape[0]
    idx = np.clip(np.arange(-n, M1 + n), 0, M1 - 1)
    ext = a[idx]
    kern = weights.reshape((-1,) + (1,) * (a.ndim - 1))
    if weights.size <= 24:
        out = np.zeros_like(a)
        for l in range(-n, n + 1):
            # out[m] += w_l * ext[m + n - l]  (w symmetric)
            out += weights[l + n] * ext[n - l: n - l + M1]
        return out
    full = fftconvolve(ext, kern, mode="valid", axes=0)
    return full


def para_lower_mod(grid: Grid, times: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a << b = sum_j (S_{j-1} Q_j a) Delta_j b`` at array level (axis 0 is time)."""
    times = np.asarray(times, dtype=float)
    if a.shape[0] != times.size or b.shape[0] != times.size:
        raise ShapeError("leading axis must be time")
    dt = float(times[1] - times[0]) if times.size > 1 else 1.0
    if times.size > 2:
        d = np.diff(times)
        if np.max(np.abs(d - dt)) > 1e-9 * dt * times.size:
            raise ContractError("modified paraproduct needs a uniform time grid")
    part = get_partition(grid)
    ca = fft(grid, a)
    cb = fft(grid, b)
    lead = (1,) * (ca.ndim - grid.dim)
    acc = 0.0
    for j in range(1, part.j_max + 1):
        low = part.low_multiplier(j - 1).reshape(lead + grid.rshape) * ca
        w = time_mollifier_weights(j, dt) if times.size > 1 else np.ones(1)
        low = time_mollify(low, w)
        hi = part.multiplier(j).reshape(lead + grid.rshape) * cb
        acc = acc + pad_to_fine(grid, low) * pad_to_fine(grid, hi)
    if np.isscalar(acc):
        return np.zeros(np.broadcast_shapes(a.shape, b.shape))
    return ifft(grid, truncate_from_fine(grid, acc))


def modified_paraproduct(f: SpaceTimeField, g: SpaceTimeField) -> SpaceTimeField:
    """``f << g``: paraproduct with the low factor mollified in time at scale ``2^{-2j}``."""
    if not isinstance(f, SpaceTimeField) or not isinstance(g, SpaceTimeField):
        raise ContractError("modified paraproduct acts on space-time fields")
    _pair(f, g)
    if not f.uniform:
        raise ContractError("modified paraproduct needs a uniform time grid")
    return f.like(para_lower_mod(f.grid, f.times, f.values, g.values))


def mollification_resolution(grid: Grid, dt: float) -> float:
    """``dt * 2^{2 j_max}``; above 1 the finest ``Q_j`` reduce to the identity."""
    return float(dt * 4.0 ** get_partition(grid).j_max)


# ----------------------------------------------------------------------------
# commutator
# ----------------------------------------------------------------------------


def commutator_arrays(grid: Grid, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``com(a, b, c) = (a < b) o c - a (b o c)``."""
    ab = para_lower(grid, a, b)
    return resonant(grid, ab, c) - dealiased_product(grid, a, resonant(grid, b, c))


def commutator(f, g, h):
    """Trilinear commutator ``(f < g) o h - f (g o h)``."""
    _pair(f, g)
    _pair(f, h)
    return _wrap(f, commutator_arrays(f.grid, f.values, g.values, h.values))


# ----------------------------------------------------------------------------
# localization
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LocalizationPlan:
    """Space-time cells with their frequency cutoffs.

    Spatial shells ``w_k`` (``k = 0..K-1``) are a smooth dyadic partition in
    ``|x|``; temporal shells ``v_m`` (``m = 0..Mt-1``) a smooth dyadic
    partition in ``t``.  Cell ``(k, m)`` keeps blocks ``j > L_{k,m}`` in the
    rough part, with ``L_{k,m} = floor(L + a k + b m)``.
    """

    grid: Grid
    times: np.ndarray
    L: float
    a: float = 1.0
    b: float = 1.0
    n_space: int | None = None
    n_time: int | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if self.n_space is None:
            R = float(np.max(self.grid.radius))
            K = 1
            while 2.0 ** (K - 1) * 0.75 < R:
                K += 1
            object.__setattr__(self, "n_space", K)
        if self.n_time is None:
            T = float(t[-1]) if t.size else 0.0
            Mt = 1
            while 2.0 ** (Mt - 1) * 0.75 < T:
                Mt += 1
            object.__setattr__(self, "n_time", Mt)
        if self.n_space < 1 or self.n_time < 1:
            raise ContractError("shell counts must be positive")

    @property
    def levels(self) -> np.ndarray:
        k = np.arange(self.n_space)[:, None]
        m = np.arange(self.n_time)[None, :]
        return np.floor(self.L + self.a * k + self.b * m).astype(int)

    def spatial_shells(self) -> np.ndarray:
        return _dyadic_shells(self.grid.radius, self.n_space)

    def temporal_shells(self) -> np.ndarray:
        return _dyadic_shells(self.times, self.n_time)

    def check_cover(self, tol: float = 1e-12) -> None:
        ws = self.spatial_shells().sum(axis=0)
        vs = self.temporal_shells().sum(axis=0)
        if np.max(np.abs(ws - 1.0)) > tol or np.max(np.abs(vs - 1.0)) > tol:
            raise ContractError("shells do not cover the torus and the time interval")

    def to_json(self) -> dict:
        return {"L": self.L, "a": self.a, "b": self.b, "n_space": self.n_space,
                "n_time": self.n_time, "levels": self.levels.tolist()}


def _dyadic_shells(r: np.ndarray, K: int) -> np.ndarray:
    """Shells ``chi(r)``, ``chi(r/2^k) - chi(r/2^{k-1})``, last one ``1 - chi(r/2^{K-2})``."""
    r = np.asarray(r, dtype=float)
    out = np.empty((K,) + r.shape)
    if K == 1:
        out[0] = 1.0
        return out
    out[0] = low_profile(r)
    for k in range(1, K - 1):
        out[k] = low_profile(r / 2.0**k) - low_profile(r / 2.0 ** (k - 1))
    out[K - 1] = 1.0 - low_profile(r / 2.0 ** (K - 2))
    return out


def localize_arrays(plan: LocalizationPlan, a: np.ndarray) -> tuple:
    """Array-level ``(V_> a, V_<= a)``; axis 0 is time, components allowed after it."""
    grid = plan.grid
    plan.check_cover()
    part = get_partition(grid)
    c = fft(grid, a)
    lead = (1,) * (c.ndim - grid.dim)
    ws = plan.spatial_shells()
    vs = plan.temporal_shells()
    levels = plan.levels
    highs = {}
    rough = np.zeros_like(a)
    for k in range(plan.n_space):
        for m in range(plan.n_time):
            lev = int(levels[k, m])
            if lev not in highs:
                if lev + 1 > part.j_max:
                    highs[lev] = None
                else:
                    keep = 1.0 - part.low_multiplier(max(lev + 1, -1))
                    highs[lev] = ifft(grid, keep.reshape(lead + grid.rshape) * c)
            hi = highs[lev]
            if hi is None:
                continue
            vt = vs[m].reshape((-1,) + (1,) * (a.ndim - 1))
            rough = rough + vt * ws[k] * hi
    return rough, a - rough


def localize(f: SpaceTimeField, plan: LocalizationPlan) -> tuple:
    """Split ``f`` into its rough part ``V_> f`` and smooth part ``V_<= f``."""
    if f.grid != plan.grid or f.times.size != plan.times.size:
        raise ShapeError("plan and field grids differ")
    rough, smooth = localize_arrays(plan, f.values)
    return f.like(rough), f.like(smooth)
