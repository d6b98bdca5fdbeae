"""Periodic grids, Fourier transforms, multipliers and Littlewood-Paley blocks.

The torus ``[-L, L)^dim`` with ``N`` points per axis approximates the whole
space.  Every operator acts on the trailing ``dim`` axes of an array, so the
same kernels serve single fields, vector fields (a component axis placed just
before the spatial axes) and space-time fields (a leading time axis).

Real transforms use ``scipy.fft`` with a configurable worker count.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Sequence, Union

import numpy as np
import scipy.fft as sfft

from .errors import ContractError, RangeError, ShapeError

__all__ = [
    "Grid",
    "Field",
    "SpectralField",
    "SpaceTimeField",
    "DyadicPartition",
    "get_partition",
    "set_threads",
    "get_threads",
    "smooth_step",
    "low_profile",
    "fft",
    "ifft",
    "to_spectral",
    "from_spectral",
    "l2_norm_sq",
    "spectral_l2_norm_sq",
    "block",
    "blocks",
    "low_freq_sum",
    "apply_multiplier",
    "grad",
    "div",
    "laplacian",
    "partial",
    "pad_to_fine",
    "truncate_from_fine",
    "dealiased_product",
]

_THREADS = max(1, int(os.environ.get("PARAPDE_THREADS", "1") or 1))


def set_threads(n: int) -> None:
    """Set the number of FFT worker threads used by every transform."""
    global _THREADS
    if int(n) < 1:
        raise RangeError("thread count must be >= 1")
    _THREADS = int(n)


def get_threads() -> int:
    return _THREADS


# ----------------------------------------------------------------------------
# grid and carriers
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L, L)^dim``.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    N : int
        Points per axis, a power of two no smaller than 16.
    L : float
        Half length of the periodic box.
    """

    dim: int
    N: int
    L: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise RangeError(f"dim must be 1 or 2, got {self.dim}")
        n = int(self.N)
        if n < 16 or n & (n - 1):
            raise RangeError(f"N must be a power of two >= 16, got {self.N}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise RangeError(f"L must be positive, got {self.L}")
        object.__setattr__(self, "N", n)
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.dim

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.dim, 0))

    @property
    def rshape(self) -> tuple:
        return (self.N,) * (self.dim - 1) + (self.N // 2 + 1,)

    @property
    def nyquist(self) -> float:
        return np.pi * self.N / (2.0 * self.L)

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def volume(self) -> float:
        return (2.0 * self.L) ** self.dim

    @cached_property
    def x(self) -> np.ndarray:
        """One-dimensional coordinates ``-L + i h``."""
        return -self.L + self.h * np.arange(self.N)

    @cached_property
    def coords(self) -> tuple:
        """Coordinate arrays of shape ``grid.shape``, one per axis."""
        if self.dim == 1:
            return (self.x.copy(),)
        return tuple(np.meshgrid(self.x, self.x, indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        """Euclidean norm of the coordinate, sampled on the grid."""
        return np.sqrt(sum(c * c for c in self.coords))

    # wavenumbers ----------------------------------------------------------
    @cached_property
    def k_full(self) -> tuple:
        """Wavenumbers in full FFT layout, broadcastable to ``shape``."""
        k1 = np.pi / self.L * np.fft.fftfreq(self.N, d=1.0 / self.N)
        if self.dim == 1:
            return (k1,)
        return (k1[:, None], k1[None, :])

    @cached_property
    def k_r(self) -> tuple:
        """Wavenumbers in real-FFT layout, broadcastable to ``rshape``.

        The Nyquist wavenumber carries a negative sign, as in ``fftfreq``.
        """
        kf = np.pi / self.L * np.fft.fftfreq(self.N, d=1.0 / self.N)
        kr = np.pi / self.L * np.arange(self.N // 2 + 1)
        if self.dim == 1:
            return (kr,)
        return (kf[:, None], kr[None, :])

    @cached_property
    def kabs_r(self) -> np.ndarray:
        return np.sqrt(self.k2_r)

    @cached_property
    def k2_r(self) -> np.ndarray:
        out = np.zeros(self.rshape)
        for k in self.k_r:
            out = out + k * k
        return out

    @cached_property
    def kabs_full(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for k in self.k_full:
            out = out + k * k
        return np.sqrt(out)

    @cached_property
    def ik_r(self) -> tuple:
        """First-derivative multipliers ``i k`` with the Nyquist mode removed."""
        out = []
        for axis, k in enumerate(self.k_r):
            m = 1j * k
            m = np.array(np.broadcast_to(m, self.rshape))
            idx = [slice(None)] * self.dim
            idx[axis] = self.N // 2
            m[tuple(idx)] = 0.0
            out.append(m)
        return tuple(out)

    def to_json(self) -> dict:
        return {"dim": self.dim, "N": self.N, "L": self.L}


ArrayLike = Union[np.ndarray, float]


def _check_values(grid: Grid, values: np.ndarray, lead: int | None = None) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[values.ndim - grid.dim:] != grid.shape:
        raise ShapeError(f"trailing shape {values.shape} does not match grid {grid.shape}")
    if lead is not None and values.ndim - grid.dim != lead:
        raise ShapeError(f"expected {lead} leading axes, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise RangeError("field values must be finite")
    return values


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples on a grid, optionally with one leading component axis."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _check_values(self.grid, self.values)
        if v.ndim - self.grid.dim > 1:
            raise ShapeError("a Field carries at most one component axis")
        object.__setattr__(self, "values", v)

    @property
    def ncomp(self) -> int | None:
        return None if self.values.ndim == self.grid.dim else self.values.shape[0]

    def like(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    def __add__(self, other):
        return self.like(self.values + _vals(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.like(self.values - _vals(other))

    def __rsub__(self, other):
        return self.like(_vals(other) - self.values)

    def __neg__(self):
        return self.like(-self.values)

    def __mul__(self, c):
        if isinstance(c, (Field, SpaceTimeField)):
            raise TypeError("use dealiased_product or paracalc for field products")
        return self.like(self.values * c)

    __rmul__ = __mul__

    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Full complex FFT coefficients of a field (``numpy.fft.fftn`` layout)."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.grid.shape:
            raise ShapeError(f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "coeffs", c)

    def hermitian_defect(self) -> float:
        """Max ``|c(-k) - conj c(k)|`` over the lattice, zero for real fields."""
        c = self.coeffs
        flipped = c
        for ax in range(self.grid.dim):
            flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
        return float(np.max(np.abs(flipped - np.conj(c))))


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Time series of fields sharing one grid.

    ``values`` has shape ``(M+1, [ncomp,] *grid.shape)`` and ``times`` is an
    increasing array of length ``M+1``.
    """

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    uniform: bool = field(default=True)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ShapeError("times must be a non-empty 1-d array")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ShapeError("times must be strictly increasing")
        v = _check_values(self.grid, self.values)
        if v.shape[0] != t.size:
            raise ShapeError(f"{t.size} times but {v.shape[0]} slices")
        if v.ndim - self.grid.dim > 2:
            raise ShapeError("a SpaceTimeField carries at most one component axis")
        uni = True
        if t.size > 2:
            d = np.diff(t)
            uni = bool(np.max(np.abs(d - d[0])) <= 1e-9 * max(d[0], 1e-300) * t.size)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "uniform", uni)

    @property
    def dt(self) -> float:
        if self.times.size < 2:
            return 0.0
        return float(self.times[1] - self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def ncomp(self) -> int | None:
        return None if self.values.ndim == self.grid.dim + 1 else self.values.shape[1]

    def slice(self, m: int) -> Field:
        return Field(self.grid, self.values[m])

    def at(self, t: float) -> Field:
        """Slice at the grid time nearest to ``t``."""
        m = int(np.argmin(np.abs(self.times - t)))
        return self.slice(m)

    def like(self, values: np.ndarray) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.times, values)

    @classmethod
    def zeros(cls, grid: Grid, times: Sequence[float], ncomp: int | None = None) -> "SpaceTimeField":
        times = np.asarray(times, dtype=float)
        comp = () if ncomp is None else (ncomp,)
        return cls(grid, times, np.zeros((times.size,) + comp + grid.shape))

    @classmethod
    def constant_in_time(cls, f: Field, times: Sequence[float]) -> "SpaceTimeField":
        times = np.asarray(times, dtype=float)
        v = np.broadcast_to(f.values, (times.size,) + f.values.shape).copy()
        return cls(f.grid, times, v)

    def __add__(self, other):
        return self.like(self.values + _vals(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.like(self.values - _vals(other))

    def __neg__(self):
        return self.like(-self.values)

    def __mul__(self, c):
        if isinstance(c, (Field, SpaceTimeField)):
            raise TypeError("use dealiased_product or paracalc for field products")
        return self.like(self.values * c)

    __rmul__ = __mul__

    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def _vals(x):
    if isinstance(x, (Field, SpaceTimeField)):
        return x.values
    return x


def _wrap(like, values):
    if isinstance(like, SpaceTimeField):
        return SpaceTimeField(like.grid, like.times, values)
    return Field(like.grid, values)


# ----------------------------------------------------------------------------
# transforms
# ----------------------------------------------------------------------------


def fft(grid: Grid, a: np.ndarray) -> np.ndarray:
    """Real FFT over the trailing spatial axes."""
    return sfft.rfftn(a, axes=grid.axes, workers=_THREADS)


def ifft(grid: Grid, c: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft`, returning real samples."""
    return sfft.irfftn(c, s=grid.shape, axes=grid.axes, workers=_THREADS)


def to_spectral(f: Field) -> SpectralField:
    return SpectralField(f.grid, np.fft.fftn(f.values, axes=f.grid.axes))


def from_spectral(sf: SpectralField, check_real: bool = True, tol: float = 1e-9) -> Field:
    if check_real:
        scale = max(float(np.max(np.abs(sf.coeffs))), 1.0)
        if sf.hermitian_defect() > tol * scale:
            raise ContractError("coefficients are not Hermitian; they do not represent a real field")
    return Field(sf.grid, np.real(np.fft.ifftn(sf.coeffs, axes=sf.grid.axes)))


def l2_norm_sq(f: Field) -> float:
    """Lattice quadrature of ``int |f|^2``."""
    return float(np.sum(f.values**2) * f.grid.cell_volume)


def spectral_l2_norm_sq(sf: SpectralField) -> float:
    """Parseval counterpart of :func:`l2_norm_sq` computed from coefficients."""
    g = sf.grid
    return float(np.sum(np.abs(sf.coeffs) ** 2) * g.cell_volume / g.N**g.dim)


# ----------------------------------------------------------------------------
# dyadic partition
# ----------------------------------------------------------------------------


def smooth_step(s: ArrayLike) -> np.ndarray:
    """C-infinity transition equal to 0 for ``s <= 0`` and 1 for ``s >= 1``."""
    s = np.asarray(s, dtype=float)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    r = 1.0 - s
    b = np.where(r > 0, np.exp(-1.0 / np.where(r > 0, r, 1.0)), 0.0)
    return a / (a + b)


def low_profile(r: ArrayLike) -> np.ndarray:
    """Radial bump equal to 1 on ``r <= 3/4`` and 0 on ``r >= 1``."""
    return 1.0 - smooth_step(4.0 * (np.asarray(r, dtype=float) - 0.75))


@dataclass(frozen=True, eq=False)
class DyadicPartition:
    """Littlewood-Paley block multipliers for a grid.

    Block ``-1`` is the low-pass profile ``chi(|k|)``; block ``j`` in
    ``0..j_max-1`` is ``chi(|k|/2^{j+1}) - chi(|k|/2^j)``; the terminal block
    ``j_max`` is ``1 - chi(|k|/2^{j_max})`` and absorbs every wavenumber above
    the last annulus.  The multipliers are divided by their pointwise sum so
    that they add up to one on the lattice.
    """

    grid: Grid
    j_max: int
    multipliers: np.ndarray  # shape (j_max + 2, *grid.rshape)

    j_min: int = -1

    @property
    def n_blocks(self) -> int:
        return self.j_max + 2

    @property
    def indices(self) -> range:
        return range(-1, self.j_max + 1)

    def multiplier(self, j: int) -> np.ndarray:
        self._check(j)
        return self.multipliers[j + 1]

    def low_multiplier(self, j: int) -> np.ndarray:
        """Multiplier of ``S_j = sum_{i <= j-1} Delta_i``."""
        if j < -1:
            raise RangeError(f"S_j requires j >= -1, got {j}")
        if j == -1:
            return np.zeros(self.grid.rshape)
        top = min(j + 1, self.n_blocks)  # block i sits at row i + 1
        return np.sum(self.multipliers[:top], axis=0)

    def _check(self, j: int) -> None:
        if not (-1 <= j <= self.j_max):
            raise RangeError(f"block index {j} outside [-1, {self.j_max}]")

    def full_multipliers(self) -> np.ndarray:
        """Block multipliers on the full FFT layout (for diagnostics)."""
        return _profiles(self.grid.kabs_full, self.j_max)

    def block_of_wavenumber(self, k: float) -> list:
        """Indices of blocks whose multiplier is non-zero at ``|k|``."""
        vals = _profiles(np.array([abs(k)]), self.j_max)[:, 0]
        return [j - 1 for j in range(vals.size) if vals[j] > 0]


def _profiles(kabs: np.ndarray, j_max: int) -> np.ndarray:
    out = np.empty((j_max + 2,) + kabs.shape)
    out[0] = low_profile(kabs)
    for j in range(0, j_max):
        out[j + 1] = low_profile(kabs / 2.0 ** (j + 1)) - low_profile(kabs / 2.0**j)
    out[j_max + 1] = 1.0 - low_profile(kabs / 2.0**j_max)
    out = np.clip(out, 0.0, None)
    out /= np.sum(out, axis=0)
    return out


def _j_max(grid: Grid) -> int:
    j = -1
    while 2.0 ** (j + 3) <= grid.nyquist:
        j += 1
    if j < 0:
        raise RangeError("grid too coarse for a dyadic partition")
    return j


@lru_cache(maxsize=64)
def get_partition(grid: Grid) -> DyadicPartition:
    """Return the (cached) dyadic partition of ``grid``."""
    jm = _j_max(grid)
    mult = _profiles(grid.kabs_r, jm)
    mult.setflags(write=False)
    return DyadicPartition(grid=grid, j_max=jm, multipliers=mult)


# ----------------------------------------------------------------------------
# block operators and multipliers
# ----------------------------------------------------------------------------


def _as_values(f) -> tuple:
    if isinstance(f, (Field, SpaceTimeField)):
        return f.grid, f.values
    raise TypeError("expected a Field or SpaceTimeField")


def block(f, j: int):
    """Littlewood-Paley block ``Delta_j f``."""
    grid, v = _as_values(f)
    part = get_partition(grid)
    m = part.multiplier(j)
    return _wrap(f, ifft(grid, m * fft(grid, v)))


def blocks(grid: Grid, a: np.ndarray) -> np.ndarray:
    """All blocks of an array, stacked on a new leading axis (index ``j + 1``)."""
    part = get_partition(grid)
    c = fft(grid, a)
    mult = part.multipliers.reshape((part.n_blocks,) + (1,) * (c.ndim - grid.dim) + grid.rshape)
    return ifft(grid, mult * c[None])


def low_freq_sum(f, j: int):
    """``S_j f = sum_{i <= j-1} Delta_i f``."""
    grid, v = _as_values(f)
    m = get_partition(grid).low_multiplier(j)
    return _wrap(f, ifft(grid, m * fft(grid, v)))


MultiplierLike = Union[Callable[..., np.ndarray], np.ndarray]


def apply_multiplier(f, m: MultiplierLike, real: bool = True, tol: float = 1e-12):
    """Apply a Fourier multiplier to ``f``.

    Parameters
    ----------
    f : Field or SpaceTimeField
    m : callable or ndarray
        Either a function of the wavenumber components (one array per axis)
        or an array in full FFT layout of shape ``grid.shape``.
    real : bool
        Demand a real output.  The multiplier must then be Hermitian,
        ``m(-k) = conj(m(k))``; otherwise :class:`ContractError` is raised.

    Returns
    -------
    Field or SpaceTimeField when ``real``, otherwise a complex ndarray.
    """
    grid, v = _as_values(f)
    if callable(m):
        full = np.asarray(m(*grid.k_full), dtype=complex)
        full = np.broadcast_to(full, grid.shape)
        if real:
            mirror = np.broadcast_to(np.asarray(m(*[-k for k in grid.k_full]), dtype=complex), grid.shape)
            scale = max(1.0, float(np.max(np.abs(full))))
            if np.max(np.abs(mirror - np.conj(full))) > tol * scale:
                raise ContractError("multiplier is not Hermitian; real output impossible")
    else:
        full = np.asarray(m, dtype=complex)
        if full.shape != grid.shape:
            raise ShapeError(f"multiplier shape {full.shape} does not match grid {grid.shape}")
        if real:
            sf = SpectralField(grid, full)
            defect = _hermitian_defect_off_nyquist(sf)
            scale = max(1.0, float(np.max(np.abs(full))))
            if defect > tol * scale:
                raise ContractError("multiplier is not Hermitian; real output impossible")
    if not real:
        return np.fft.ifftn(full * np.fft.fftn(v, axes=grid.axes), axes=grid.axes)
    half = full[..., : grid.N // 2 + 1]
    return _wrap(f, ifft(grid, half * fft(grid, v)))


def _hermitian_defect_off_nyquist(sf: SpectralField) -> float:
    c = sf.coeffs
    flipped = c
    for ax in range(sf.grid.dim):
        flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
    diff = np.abs(flipped - np.conj(c))
    n2 = sf.grid.N // 2
    for ax in range(sf.grid.dim):
        idx = [slice(None)] * sf.grid.dim
        idx[ax] = n2
        diff[tuple(idx)] = 0.0
    return float(np.max(diff))


# ----------------------------------------------------------------------------
# derivatives (array level, trailing spatial axes)
# ----------------------------------------------------------------------------


def partial(grid: Grid, a: np.ndarray, axis: int, order: int = 1) -> np.ndarray:
    """Spectral partial derivative along spatial ``axis`` (0-based)."""
    c = fft(grid, a)
    if order % 2:
        m = grid.ik_r[axis] ** order
    else:
        m = (-1.0) ** (order // 2) * np.broadcast_to(grid.k_r[axis], grid.rshape) ** order
    return ifft(grid, m * c)


def grad(grid: Grid, a: np.ndarray) -> np.ndarray:
    """Gradient; a component axis of length ``dim`` is inserted before the spatial axes."""
    c = fft(grid, a)
    comps = [ifft(grid, ik * c) for ik in grid.ik_r]
    return np.stack(comps, axis=a.ndim - grid.dim)


def div(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Divergence of a vector array with its component axis before the spatial axes."""
    cax = v.ndim - grid.dim - 1
    out = None
    for i in range(grid.dim):
        term = partial(grid, np.take(v, i, axis=cax), i)
        out = term if out is None else out + term
    return out


def laplacian(grid: Grid, a: np.ndarray) -> np.ndarray:
    return ifft(grid, -grid.k2_r * fft(grid, a))


# ----------------------------------------------------------------------------
# dealiased products
# ----------------------------------------------------------------------------


def pad_to_fine(grid: Grid, c: np.ndarray) -> np.ndarray:
    """Map real-FFT coefficients on ``N`` points to real samples on ``2N`` points.

    Nyquist modes are discarded so the fine samples are band-limited to
    ``|m| < N/2``; products of two such samples are then exact on the fine grid.
    """
    N, h = grid.N, grid.N // 2
    lead = c.shape[: c.ndim - grid.dim]
    scale = 2.0**grid.dim
    if grid.dim == 1:
        out = np.zeros(lead + (N + 1,), dtype=complex)
        out[..., :h] = c[..., :h] * scale
        return sfft.irfft(out, n=2 * N, axis=-1, workers=_THREADS)
    out = np.zeros(lead + (2 * N, N + 1), dtype=complex)
    out[..., :h, :h] = c[..., :h, :h] * scale
    out[..., 2 * N - h + 1 :, :h] = c[..., h + 1 :, :h] * scale
    return sfft.irfftn(out, s=(2 * N, 2 * N), axes=(-2, -1), workers=_THREADS)


def truncate_from_fine(grid: Grid, fine: np.ndarray) -> np.ndarray:
    """Project fine-grid samples back to real-FFT coefficients on ``N`` points."""
    N, h = grid.N, grid.N // 2
    scale = 2.0**grid.dim
    if grid.dim == 1:
        C = sfft.rfft(fine, axis=-1, workers=_THREADS)
        out = np.zeros(C.shape[:-1] + (h + 1,), dtype=complex)
        out[..., :h] = C[..., :h] / scale
        return out
    C = sfft.rfftn(fine, axes=(-2, -1), workers=_THREADS)
    out = np.zeros(C.shape[:-2] + grid.rshape, dtype=complex)
    out[..., :h, :h] = C[..., :h, :h] / scale
    out[..., h + 1 :, :h] = C[..., 2 * N - h + 1 :, :h] / scale
    return out


def dealiased_product(grid: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise product computed with 2x zero padding (array level)."""
    A = pad_to_fine(grid, fft(grid, a))
    B = pad_to_fine(grid, fft(grid, b))
    return ifft(grid, truncate_from_fine(grid, A * B))
