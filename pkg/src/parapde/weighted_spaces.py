"""Polynomial weights and weighted Besov, Hoelder and Sobolev norms.

The weighted ``L^p`` norm is ``||rho f||_p`` computed by the lattice sum
times the cell volume (trapezoidal rule, exact for periodic trigonometric
integrands).  Besov norms sum Littlewood-Paley blocks of ``f`` measured in
that weighted ``L^p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import ContractError, RangeError, ShapeError
from .spectral_core import (
    Field,
    Grid,
    SpaceTimeField,
    blocks,
    get_partition,
    partial,
    smooth_step,
)

__all__ = [
    "Weight",
    "NormSpec",
    "FLAVORS",
    "lp_norm",
    "besov_norm",
    "besov_norm_values",
    "block_sup_profile",
    "holder_norm",
    "sobolev_norm",
    "norm",
    "parabolic_norm",
    "time_lq_norm",
    "localized_norm",
    "localization_centers",
    "interpolation_check",
    "InterpolationReport",
    "gradient_interpolation_check",
    "norm_report",
]

FLAVORS = ("besov", "holder_zygmund", "classical_holder", "sobolev_Hkp", "sup_time")


class Weight:
    """Polynomial weight ``rho_delta(x) = (1 + |x|^2)^(-delta/2)`` on a grid.

    The coordinate is the one of the fundamental domain ``[-L, L)^dim``.
    """

    def __init__(self, grid: Grid, delta: float = 0.0):
        if not np.isfinite(delta):
            raise RangeError("weight exponent must be finite")
        self.grid = grid
        self.delta = float(delta)

    def __repr__(self) -> str:
        return f"Weight(delta={self.delta!r}, N={self.grid.N}, L={self.grid.L!r})"

    @cached_property
    def _w(self) -> np.ndarray:
        return 1.0 + self.grid.radius**2

    @cached_property
    def values(self) -> np.ndarray:
        if self.delta == 0.0:
            return np.ones(self.grid.shape)
        return self._w ** (-0.5 * self.delta)

    def field(self) -> Field:
        return Field(self.grid, self.values)

    def at(self, z) -> float:
        """Weight evaluated at a point ``z`` (scalar or coordinate tuple)."""
        r2 = float(np.sum(np.square(np.atleast_1d(z))))
        return (1.0 + r2) ** (-0.5 * self.delta)

    def power(self, gamma: float) -> "Weight":
        """``rho_delta^gamma = rho_{gamma delta}``."""
        return Weight(self.grid, gamma * self.delta)

    def __mul__(self, other: "Weight") -> "Weight":
        if not isinstance(other, Weight):
            return NotImplemented
        if other.grid != self.grid:
            raise ShapeError("weights live on different grids")
        return Weight(self.grid, self.delta + other.delta)

    def derivatives(self, order: int) -> list:
        """Analytic partial derivatives of the weight of the given order (<= 2).

        Returns a list of arrays indexed like :func:`_multi_indices`.
        """
        d, w, xs = self.delta, self._w, self.grid.coords
        if order == 0:
            return [self.values]
        if order == 1:
            return [-d * x * w ** (-0.5 * d - 1.0) for x in xs]
        if order == 2:
            out = []
            for i, l in _multi_indices(self.grid.dim, 2):
                term = d * (d + 2.0) * xs[i] * xs[l] * w ** (-0.5 * d - 2.0)
                if i == l:
                    term = term - d * w ** (-0.5 * d - 1.0)
                out.append(term)
            return out
        raise RangeError("weight derivatives implemented up to order 2")

    def admissibility_constant(self) -> float:
        """Measured ``max |grad rho| / rho`` using periodic central differences."""
        h = self.grid.h
        v = self.values
        g2 = np.zeros_like(v)
        for ax in range(self.grid.dim):
            dv = (np.roll(v, -1, axis=ax) - np.roll(v, 1, axis=ax)) / (2 * h)
            g2 += dv * dv
        return float(np.max(np.sqrt(g2) / v))

    def to_json(self) -> dict:
        return {"delta": self.delta}


def _multi_indices(dim: int, order: int) -> list:
    if order == 0:
        return [()]
    if order == 1:
        return [(i,) for i in range(dim)]
    if order == 2:
        return [(i, l) for i in range(dim) for l in range(i, dim)]
    raise RangeError("derivative order above 2 not supported")


def _check_p(p) -> float:
    p = float(p)
    if not (p >= 1.0):
        raise RangeError(f"integrability exponent must lie in [1, inf], got {p}")
    return p


@dataclass(frozen=True)
class NormSpec:
    """Description of a weighted norm.

    Parameters
    ----------
    alpha : float
        Regularity index.
    p, q : float
        Integrability exponents in ``[1, inf]`` (``math.inf`` for sup).
    weight : Weight
    flavor : str
        One of :data:`FLAVORS`.
    """

    alpha: float
    p: float
    q: float
    weight: Weight
    flavor: str = "besov"

    def __post_init__(self):
        object.__setattr__(self, "p", _check_p(self.p))
        object.__setattr__(self, "q", _check_p(self.q))
        if self.flavor not in FLAVORS:
            raise ContractError(f"unknown flavor {self.flavor!r}")
        if self.flavor == "holder_zygmund" and not (math.isinf(self.p) and math.isinf(self.q)):
            raise ContractError("holder_zygmund requires p = q = inf")

    def to_json(self) -> dict:
        return {
            "flavor": self.flavor,
            "alpha": float(self.alpha),
            "p": _exp_json(self.p),
            "q": _exp_json(self.q),
            "delta": self.weight.delta,
        }


def _exp_json(p: float):
    return "inf" if math.isinf(p) else float(p)


def lp_norm(grid: Grid, a: np.ndarray, p: float, axes=None) -> np.ndarray:
    """Lattice ``L^p`` norm over the spatial axes of ``a`` (vectorized over leading axes)."""
    axes = grid.axes if axes is None else axes
    a = np.abs(a)
    if math.isinf(p):
        return np.max(a, axis=axes)
    return (np.sum(a**p, axis=axes) * grid.cell_volume) ** (1.0 / p)


def _field_values(f) -> tuple:
    if isinstance(f, (Field, SpaceTimeField)):
        return f.grid, f.values
    raise TypeError("expected Field or SpaceTimeField")


def block_sup_profile(f, weight: Weight | None = None, p: float = math.inf) -> np.ndarray:
    """``||Delta_j f||_{L^p(rho)}`` for ``j = -1..j_max`` (leading axes kept).

    Component axes, if present, are folded by taking the max over components.
    """
    grid, v = _field_values(f)
    rho = 1.0 if weight is None else weight.values
    B = blocks(grid, v) * rho
    prof = lp_norm(grid, B, p)
    extra = prof.ndim - 1 - (1 if isinstance(f, SpaceTimeField) else 0)
    if extra > 0:
        prof = np.max(prof, axis=-1)
    return prof


def besov_norm_values(grid: Grid, v: np.ndarray, alpha: float, p: float, q: float,
                      weight: Weight | None = None) -> np.ndarray:
    """Weighted Besov norm of an array, vectorized over leading axes."""
    part = get_partition(grid)
    rho = 1.0 if weight is None else weight.values
    B = blocks(grid, v) * rho
    prof = lp_norm(grid, B, p)  # (J, ...)
    scale = 2.0 ** (alpha * np.arange(-1, part.j_max + 1, dtype=float))
    scale = scale.reshape((-1,) + (1,) * (prof.ndim - 1))
    terms = scale * prof
    if math.isinf(q):
        return np.max(terms, axis=0)
    return np.sum(terms**q, axis=0) ** (1.0 / q)


def besov_norm(f: Field, spec: NormSpec) -> float:
    """``(sum_j 2^{alpha j q} ||Delta_j f||_{L^p(rho)}^q)^{1/q}``."""
    if spec.weight.grid != f.grid:
        raise ShapeError("weight and field grids differ")
    val = besov_norm_values(f.grid, f.values, spec.alpha, spec.p, spec.q, spec.weight)
    return float(np.max(val))


def _weighted_derivatives(f: Field, weight: Weight, order: int) -> list:
    """All partial derivatives of order ``order`` of ``rho f`` (Leibniz rule)."""
    g = f.grid
    v = f.values
    rho = weight.derivatives(0)[0]
    if order == 0:
        return [rho * v]
    d1 = [partial(g, v, i) for i in range(g.dim)]
    r1 = weight.derivatives(1)
    if order == 1:
        return [r1[i] * v + rho * d1[i] for i in range(g.dim)]
    if order == 2:
        r2 = weight.derivatives(2)
        out = []
        for n, (i, l) in enumerate(_multi_indices(g.dim, 2)):
            fil = partial(g, partial(g, v, i), l)
            out.append(r2[n] * v + r1[i] * d1[l] + r1[l] * d1[i] + rho * fil)
        return out
    raise RangeError("holder_norm supports k <= 2")


def _holder_quotient(grid: Grid, comps: list, alpha: float) -> float:
    mmax = int(math.ceil(1.0 / grid.h))
    mmax = min(mmax, grid.N // 2)
    best = 0.0
    for c in comps:
        for ax in range(grid.dim):
            for m in range(1, mmax + 1):
                diff = np.max(np.abs(np.roll(c, -m, axis=ax) - c))
                q = diff / (m * grid.h) ** alpha
                if q > best:
                    best = float(q)
    return best


def holder_norm(f: Field, k: int, alpha: float, weight: Weight | None = None) -> float:
    """Classical weighted Hoelder norm of order ``k + alpha``.

    ``sum_{i<=k} ||grad^i (rho f)||_inf`` plus the Hoelder quotient of
    ``grad^k (rho f)`` over pairs ``(x, x + m h e_axis)`` with ``m h <= 1``.
    """
    if not (0.0 <= alpha < 1.0):
        raise RangeError(f"alpha must lie in [0, 1), got {alpha}")
    if k < 0:
        raise RangeError("k must be >= 0")
    weight = Weight(f.grid, 0.0) if weight is None else weight
    total = 0.0
    comps = None
    for i in range(k + 1):
        comps = _weighted_derivatives(f, weight, i)
        total += max(float(np.max(np.abs(c))) for c in comps)
    if alpha > 0.0:
        total += _holder_quotient(f.grid, comps, alpha)
    return total


def sobolev_norm(f: Field, k: int, p: float, weight: Weight | None = None) -> float:
    """``||rho f||_{L^p} + ||grad^k (rho f)||_{L^p}``."""
    weight = Weight(f.grid, 0.0) if weight is None else weight
    base = float(lp_norm(f.grid, weight.values * f.values, p))
    if k == 0:
        return 2.0 * base
    comps = _weighted_derivatives(f, weight, k)
    mag = np.sqrt(sum(c * c for c in comps))
    return base + float(lp_norm(f.grid, mag, p))


def norm(f, spec: NormSpec) -> float:
    """Dispatch on ``spec.flavor``."""
    fl = spec.flavor
    if fl in ("besov", "holder_zygmund"):
        if isinstance(f, SpaceTimeField):
            raise ContractError("use flavor 'sup_time' for space-time fields")
        return besov_norm(f, spec)
    if fl == "classical_holder":
        k = int(math.floor(spec.alpha))
        return holder_norm(f, k, spec.alpha - k, spec.weight)
    if fl == "sobolev_Hkp":
        k = int(round(spec.alpha))
        if abs(k - spec.alpha) > 1e-12:
            raise ContractError("Sobolev flavor needs an integer order")
        return sobolev_norm(f, k, spec.p, spec.weight)
    if fl == "sup_time":
        if not isinstance(f, SpaceTimeField):
            raise ContractError("sup_time flavor needs a SpaceTimeField")
        vals = besov_norm_values(f.grid, f.values, spec.alpha, spec.p, spec.q, spec.weight)
        vals = vals.reshape(vals.shape[0], -1).max(axis=1)
        return float(np.max(vals))
    raise ContractError(fl)


def norm_report(f, spec: NormSpec) -> dict:
    """JSON-ready report ``{flavor, alpha, p, q, delta, value}``."""
    out = spec.to_json()
    out["value"] = norm(f, spec)
    return out


def time_lq_norm(values: np.ndarray, times: np.ndarray, q: float) -> float:
    """``L^q`` norm over time of a per-time scalar series (trapezoidal rule)."""
    values = np.abs(np.asarray(values, dtype=float))
    if math.isinf(q):
        return float(np.max(values))
    if values.size < 2:
        return 0.0
    return float(trapezoid(values**q, times) ** (1.0 / q))


def parabolic_norm(f: SpaceTimeField, alpha: float, weight: Weight | None = None) -> float:
    """``sup_t ||f(t)||_{C^alpha(rho)} + ||f||_{C^{alpha/2}_T L^inf(rho)}``.

    The time-Hoelder part includes ``sup_t ||f(t)||_{L^inf(rho)}`` and the
    quotient over all pairs of grid times.
    """
    if not (0.0 < alpha < 2.0):
        raise RangeError("parabolic norm defined for alpha in (0, 2)")
    grid = f.grid
    rho = 1.0 if weight is None else weight.values
    v = f.values
    space = besov_norm_values(grid, v, alpha, math.inf, math.inf, weight)
    space = float(np.max(space))
    w = (v * rho).reshape(v.shape[0], -1)
    sup = float(np.max(np.abs(w)))
    t = f.times
    quot = 0.0
    for m in range(1, t.size):
        diff = np.max(np.abs(w[m:] - w[:-m]), axis=1)
        gap = (t[m:] - t[:-m]) ** (alpha / 2.0)
        quot = max(quot, float(np.max(diff / gap)))
    return space + sup + quot


# ----------------------------------------------------------------------------
# localized characterization
# ----------------------------------------------------------------------------


def _cutoff_profile(s: np.ndarray) -> np.ndarray:
    """Radial cutoff equal to 1 on ``|s| <= 1/8`` and 0 on ``|s| >= 1/4``."""
    return 1.0 - smooth_step(8.0 * (np.abs(s) - 0.125))


def localization_centers(grid: Grid, r: float) -> np.ndarray:
    """One-dimensional center lattice with spacing ``r (1 + |z|) / 8``."""
    pos = [0.0]
    while True:
        z = pos[-1] + r * (1.0 + pos[-1]) / 8.0
        if z >= grid.L:
            break
        pos.append(z)
    pos = np.asarray(pos)
    return np.concatenate([-pos[:0:-1], pos])


def _periodic_offset(grid: Grid, x: np.ndarray, z: float) -> np.ndarray:
    d = x - z
    return (d + grid.L) % (2 * grid.L) - grid.L


def localized_norm(f: Field, alpha: float, weight_outer: Weight, r: float,
                   weight_inner: Weight | None = None, return_center: bool = False):
    """``sup_z rho(z) ||phi^z_r f||_{C^alpha(rho_inner)}``.

    ``phi^z_r(x) = chi((x - z) / (r (1 + |z|)))`` with ``chi = 1`` on
    ``|x| <= 1/8`` and ``0`` beyond ``1/4``.  Centers run over the lattice of
    :func:`localization_centers`.
    """
    if not (0.0 < r <= 1.0):
        raise RangeError(f"r must lie in (0, 1], got {r}")
    grid = f.grid
    k = int(math.floor(alpha))
    frac = alpha - k
    c1 = localization_centers(grid, r)
    if grid.dim == 1:
        centers = [(z,) for z in c1]
    else:
        centers = [(a, b) for a in c1 for b in c1]
    best, zbest = 0.0, None
    for z in centers:
        zn = math.sqrt(sum(c * c for c in z))
        scale = r * (1.0 + zn)
        s2 = sum(_periodic_offset(grid, grid.coords[i], z[i]) ** 2 for i in range(grid.dim))
        phi = _cutoff_profile(np.sqrt(s2) / scale)
        val = weight_outer.at(z) * holder_norm(Field(grid, phi * f.values), k, frac, weight_inner)
        if val > best:
            best, zbest = val, z
    if return_center:
        return best, zbest
    return best


# ----------------------------------------------------------------------------
# interpolation inequalities
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class InterpolationReport:
    lhs: float
    rhs: float
    ratio: float
    holds: bool

    def to_json(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio, "holds": self.holds}


def _inv(p: float) -> float:
    return 0.0 if math.isinf(p) else 1.0 / p


def interpolation_check(f: Field, theta: float, specs: Sequence[NormSpec], tol: float = 1e-9) -> InterpolationReport:
    """Check ``||f||_{B(spec0)} <= ||f||_{B(spec1)}^theta ||f||_{B(spec2)}^(1-theta)``.

    The three Besov specs must satisfy the convex relations between
    regularities, weight exponents and inverse integrabilities.
    """
    if not (0.0 <= theta <= 1.0):
        raise RangeError("theta must lie in [0, 1]")
    s, s1, s2 = specs
    def comb(a, b):
        return theta * a + (1.0 - theta) * b
    checks = [
        (s.alpha, comb(s1.alpha, s2.alpha)),
        (s.weight.delta, comb(s1.weight.delta, s2.weight.delta)),
        (_inv(s.p), comb(_inv(s1.p), _inv(s2.p))),
        (_inv(s.q), comb(_inv(s1.q), _inv(s2.q))),
    ]
    for a, b in checks:
        if abs(a - b) > 1e-12 * max(1.0, abs(a)):
            raise ContractError("exponents violate the interpolation relations")
    lhs = besov_norm(f, s)
    n1, n2 = besov_norm(f, s1), besov_norm(f, s2)
    if theta == 1.0:
        rhs = n1
    elif theta == 0.0:
        rhs = n2
    else:
        rhs = n1**theta * n2 ** (1.0 - theta)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return InterpolationReport(lhs, rhs, ratio, lhs <= (1.0 + tol) * rhs)


def gradient_interpolation_check(v: Field, p: float, q: float, r: float,
                                 delta: float, delta1: float, delta2: float) -> dict:
    """Ratio of the two sides of the weighted gradient interpolation inequality.

    ``||grad v rho_delta||_p`` against
    ``||grad^2 v rho_delta1||_q^{1/2} ||v rho_delta2||_r^{1/2} + ||v rho_{delta+1}||_p``
    with ``2/p = 1/r + 1/q`` and ``delta1 + delta2 = 2 delta``.
    """
    if abs(2.0 * _inv(p) - _inv(r) - _inv(q)) > 1e-12 or abs(delta1 + delta2 - 2 * delta) > 1e-12:
        raise ContractError("exponents violate 2/p = 1/r + 1/q or delta1 + delta2 = 2 delta")
    g = v.grid
    w = lambda d: Weight(g, d).values
    gr = np.sqrt(sum(partial(g, v.values, i) ** 2 for i in range(g.dim)))
    hess = np.sqrt(sum(partial(g, partial(g, v.values, i), l) ** 2
                       for i in range(g.dim) for l in range(g.dim)))
    lhs = float(lp_norm(g, gr * w(delta), p))
    rhs = float(np.sqrt(lp_norm(g, hess * w(delta1), q) * lp_norm(g, v.values * w(delta2), r)))
    rhs += float(lp_norm(g, v.values * w(delta + 1.0), p))
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else 0.0}
