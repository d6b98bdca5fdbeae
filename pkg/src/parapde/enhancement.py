"""Renormalized pairs, their diagnostics, and the KPZ noise trees.

A renormalized pair is a drift ``b`` (vector, component axis after time) and
a forcing ``f`` together with the resonant products ``b o grad I_lam b`` and
``b o grad I_lam f`` on a grid of damping parameters.  For mollified (smooth)
data these products are computed directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import ContractError, NumericalError, ShapeError
from .heat_ops import LAMBDA_GRID, duhamel_arrays, heat_arrays, phi_functions
from .paracalc import bony_parts, resonant
from .serialization import save_spacetime, write_manifest
from .spectral_core import (
    Grid,
    SpaceTimeField,
    dealiased_product,
    fft,
    grad,
    ifft,
    low_profile,
    partial,
)
from .weighted_spaces import Weight, besov_norm_values, block_sup_profile, time_lq_norm

__all__ = [
    "RenormalizedPair",
    "make_pair",
    "resonant_drift_drift",
    "resonant_drift_forcing",
    "pair_diagnostics",
    "PairDiagnostics",
    "noise_cutoff",
    "sample_noise",
    "noise_variance_rate",
    "renormalization_oracle",
    "brownian_bridge_initial",
    "smooth_sawtooth",
    "noise_driven_heat",
    "NOISE_RULES",
    "KPZEnhancement",
    "build_trees",
    "assemble_kpz_pair",
    "kpz_forcing_identity_gap",
    "HOMOGENEITY",
    "tree_decay_slopes",
    "save_enhancement",
]


# ----------------------------------------------------------------------------
# renormalized pairs
# ----------------------------------------------------------------------------


def _as_vector(b: SpaceTimeField) -> SpaceTimeField:
    if b.ncomp is None:
        if b.grid.dim != 1:
            raise ShapeError("a scalar drift is only meaningful in one dimension")
        return b.like(b.values[:, None])
    if b.ncomp != b.grid.dim:
        raise ShapeError(f"drift has {b.ncomp} components on a {b.grid.dim}-d grid")
    return b


def resonant_drift_drift(b: SpaceTimeField, lam: float) -> np.ndarray:
    """``(b o grad I_lam b)_j = sum_i b_i o d_i I_lam b_j`` (component axis 1)."""
    g = b.grid
    Ib = duhamel_arrays(g, b.times, b.values, lam)
    out = np.zeros_like(b.values)
    for j in range(g.dim):
        dIb = grad(g, Ib[:, j])  # (M, d, ...)
        for i in range(g.dim):
            out[:, j] += resonant(g, b.values[:, i], dIb[:, i])
    return out


def resonant_drift_forcing(b: SpaceTimeField, f: SpaceTimeField, lam: float) -> np.ndarray:
    """``b o grad I_lam f = sum_i b_i o d_i I_lam f``."""
    g = b.grid
    If = duhamel_arrays(g, f.times, f.values, lam)
    dIf = grad(g, If)
    out = np.zeros_like(f.values)
    for i in range(g.dim):
        out += resonant(g, b.values[:, i], dIf[:, i])
    return out


@dataclass(eq=False)
class RenormalizedPair:
    """Drift ``b``, forcing ``f`` and their resonant products.

    Attributes
    ----------
    b : SpaceTimeField
        Vector drift with component axis of length ``dim``.
    f : SpaceTimeField
        Scalar forcing on the same time grid.
    alpha : float
        Regularity index in ``(1/2, 2/3)`` used by the diagnostics.
    weight : Weight
    resonant_bb, resonant_bf : dict
        ``lam -> ndarray`` of ``b o grad I_lam b`` and ``b o grad I_lam f``.
    ell, amp : float
        ``l^b_T(rho)`` and ``A^{b,f}_{T,inf}(rho)`` once computed.
    """

    b: SpaceTimeField
    f: SpaceTimeField
    alpha: float
    weight: Weight
    resonant_bb: dict = field(default_factory=dict)
    resonant_bf: dict = field(default_factory=dict)
    ell: float = float("nan")
    amp: float = float("nan")

    def __post_init__(self):
        self.b = _as_vector(self.b)
        if self.f.ncomp is not None:
            raise ShapeError("forcing must be scalar")
        if self.b.grid != self.f.grid or not np.array_equal(self.b.times, self.f.times):
            raise ShapeError("b and f must share grid and times")
        if self.weight.grid != self.b.grid:
            raise ShapeError("weight lives on another grid")

    @property
    def grid(self) -> Grid:
        return self.b.grid

    @property
    def times(self) -> np.ndarray:
        return self.b.times

    def ensure_resonants(self, lam: float) -> None:
        """Compute the resonant products at ``lam`` directly if missing."""
        lam = float(lam)
        if lam not in self.resonant_bb:
            self.resonant_bb[lam] = resonant_drift_drift(self.b, lam)
        if lam not in self.resonant_bf:
            self.resonant_bf[lam] = resonant_drift_forcing(self.b, self.f, lam)

    def rbb(self, lam: float) -> np.ndarray:
        self.ensure_resonants(lam)
        return self.resonant_bb[float(lam)]

    def rbf(self, lam: float) -> np.ndarray:
        self.ensure_resonants(lam)
        return self.resonant_bf[float(lam)]

    def with_forcing(self, f: SpaceTimeField) -> "RenormalizedPair":
        """Same drift, new forcing; drift-drift resonants are shared."""
        return RenormalizedPair(self.b, f, self.alpha, self.weight,
                                resonant_bb=self.resonant_bb, resonant_bf={})

    def scaled(self, cb: float, cf: float) -> "RenormalizedPair":
        return RenormalizedPair(self.b * cb, self.f * cf, self.alpha, self.weight)


def make_pair(b: SpaceTimeField, f: SpaceTimeField, alpha: float = 0.6,
              weight: Weight | None = None, lambdas: Sequence[float] = ()) -> RenormalizedPair:
    """Build a pair from smooth data, computing resonants on ``lambdas``."""
    if not (0.5 < alpha < 2.0 / 3.0):
        raise ContractError("alpha must lie in (1/2, 2/3)")
    pair = RenormalizedPair(b, f, alpha, weight or Weight(b.grid, 0.0))
    for lam in lambdas:
        pair.ensure_resonants(lam)
    return pair


@dataclass(frozen=True)
class PairDiagnostics:
    ell: float
    amp: float
    sup_bb: float
    sup_bf: float
    windowed_bb: float
    windowed_bf: float
    norm_b: float
    norm_f: float
    method: str

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _sup_norm_series(grid: Grid, v: np.ndarray, alpha: float, weight: Weight) -> np.ndarray:
    """Per-time ``C^alpha(rho)`` norms (max over components)."""
    vals = besov_norm_values(grid, v, alpha, math.inf, math.inf, weight)
    return vals.reshape(vals.shape[0], -1).max(axis=1)


def _windowed_sup(b: SpaceTimeField, target: SpaceTimeField, alpha: float, weight2: Weight,
                  stride: int) -> float:
    """``sup_t sup_{s<=t} ||b(t) o grad I^t_s target||_{C^{1-2 alpha}(rho^2)}``."""
    g = b.grid
    times = b.times
    tv = target.values if target.ncomp is not None else target.values[:, None]
    best = 0.0
    k2 = g.k2_r
    ct = fft(g, tv)
    dt = float(times[1] - times[0])
    from .heat_ops import _step_coefficients  # local import keeps the public surface small

    _, A, B = _step_coefficients(g, 0.0, dt, "exponential-integrator")
    D = A * ct[:-1] + B * ct[1:]
    for mt in range(stride, times.size, stride):
        W = np.zeros((mt + 1,) + ct.shape[1:], dtype=complex)
        for m in range(mt - 1, -1, -1):
            W[m] = W[m + 1] + np.exp(-k2 * (times[mt] - times[m + 1])) * D[m]
        Wr = ifft(g, W)  # (s, comp, ...)
        res = 0.0
        for j in range(Wr.shape[1]):
            dW = grad(g, Wr[:, j])
            for i in range(g.dim):
                bt = np.broadcast_to(b.values[mt, i], dW[:, i].shape)
                res = res + resonant(g, bt, dW[:, i])
        nrm = _sup_norm_series(g, np.asarray(res), 1.0 - 2.0 * alpha, weight2)
        best = max(best, float(np.max(nrm)))
    return best


def pair_diagnostics(pair: RenormalizedPair, lambdas: Sequence[float] | None = None,
                     method: str = "windowed", q: float = math.inf, time_stride: int = 1) -> PairDiagnostics:
    """Compute ``l^b_T(rho)`` and ``A^{b,f}_{T,q}(rho)``.

    With ``method="windowed"`` the supremum over ``lam`` is replaced by twice
    the windowed supremum ``sup_{s<=t} ||b(t) o grad I^t_s (.)||``, an upper
    bound for every ``lam`` by the exponential averaging identity.  With
    ``method="grid"`` the sup runs over the stored ``lambdas``.
    """
    lambdas = LAMBDA_GRID if lambdas is None else tuple(lambdas)
    g = pair.grid
    w, w2 = pair.weight, pair.weight.power(2.0)
    a = pair.alpha
    nb_t = _sup_norm_series(g, pair.b.values, -a, w)
    nf_t = _sup_norm_series(g, pair.f.values, -a, w)
    norm_b = float(np.max(nb_t))
    norm_f = time_lq_norm(nf_t, pair.times, q)
    sup_bb = sup_bf = 0.0
    for lam in lambdas:
        sup_bb = max(sup_bb, float(np.max(_sup_norm_series(g, pair.rbb(lam), 1 - 2 * a, w2))))
        sup_bf = max(sup_bf, time_lq_norm(_sup_norm_series(g, pair.rbf(lam), 1 - 2 * a, w2), pair.times, q))
    wbb = wbf = float("nan")
    if method == "windowed":
        if not math.isinf(q):
            raise ContractError("windowed bound implemented for q = inf")
        wbb = _windowed_sup(pair.b, pair.b, a, w2, time_stride)
        wbf = _windowed_sup(pair.b, pair.f, a, w2, time_stride)
        ell = 2.0 * wbb + norm_b**2 + 1.0
        amp = 2.0 * wbf + norm_b * norm_f
    elif method == "grid":
        ell = sup_bb + norm_b**2 + 1.0
        amp = sup_bf + norm_b * norm_f
    else:
        raise ContractError(f"unknown method {method!r}")
    pair.ell, pair.amp = ell, amp
    return PairDiagnostics(ell, amp, sup_bb, sup_bf, wbb, wbf, norm_b, norm_f, method)


# ----------------------------------------------------------------------------
# noise
# ----------------------------------------------------------------------------


def noise_cutoff(s: np.ndarray, width: float = 0.25) -> np.ndarray:
    """Even smooth cutoff with value 1 at 0 and support ``|s| < width``."""
    return low_profile(np.abs(np.asarray(s, dtype=float)) / width)


def noise_variance_rate(grid: Grid, n: float, width: float = 0.25) -> float:
    """``sigma^2 = sum_k |phi(k/n)|^2 / (2L)``: pointwise variance per unit time."""
    kf = grid.k_full[0]
    return float(np.sum(noise_cutoff(kf / n, width) ** 2) / (2.0 * grid.L))


def renormalization_oracle(grid: Grid, n: float, width: float = 0.25) -> float:
    """Spectral-sum value ``sum_{k != 0} |phi(k/n)|^2 / (2 (2L))`` of ``E (d_x Y_n)^2``.

    The mean mode carries no gradient and is left out.
    """
    kf = grid.k_full[0]
    phi2 = noise_cutoff(kf / n, width) ** 2
    return float(np.sum(phi2[kf != 0]) / (4.0 * grid.L))


def _complex_normals(rng: np.random.Generator, shape: tuple, N: int) -> np.ndarray:
    """Standard complex normals on the real-FFT layout (real at 0 and Nyquist)."""
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    z[..., 0] = rng.standard_normal(shape[:-1])
    z[..., N // 2] = rng.standard_normal(shape[:-1])
    return z


def sample_noise(n: float, seed: int, grid: Grid, times: np.ndarray, width: float = 0.25,
                 amplitude: float = 1.0) -> SpaceTimeField:
    """Mollified periodized space-time white noise ``xi_n``.

    Slice ``m`` (``m < M``) holds ``Delta W_m / dt``, the average of the noise
    over ``[t_m, t_{m+1}]``; the last slice is zero.  Normalized Fourier
    coefficients of ``Delta W_m`` are independent with variance
    ``dt |phi(k/n)|^2 / (2L)``.
    """
    if grid.dim != 1:
        raise ContractError("noise sampling implemented in one dimension")
    times = np.asarray(times, dtype=float)
    dts = np.diff(times)
    rng = np.random.default_rng(seed)
    N = grid.N
    z = _complex_normals(rng, (times.size - 1, N // 2 + 1), N)
    phi = noise_cutoff(grid.k_r[0] / n, width)
    coef = N * np.sqrt(dts[:, None] / (2.0 * grid.L)) * phi * z
    inc = ifft(grid, coef)
    vals = np.zeros((times.size, N))
    vals[:-1] = amplitude * inc / dts[:, None]
    return SpaceTimeField(grid, times, vals)


def brownian_bridge_initial(n: float, seed: int, grid: Grid, width: float = 0.25, slope: float = 0.0,
                            amplitude: float = 1.0) -> np.ndarray:
    """Mollified periodic Brownian-type profile plus ``slope`` times a smooth sawtooth.

    Fourier coefficients have variance ``|phi(k/n)|^2 / (2 k^2 (2L))``, the
    stationary law of ``Y_n`` (increments of local variance ``|x-y|/2``).
    The mean mode is zero.
    """
    rng = np.random.default_rng([int(seed), 7])
    N = grid.N
    z = _complex_normals(rng, (N // 2 + 1,), N)
    k = grid.k_r[0]
    phi = noise_cutoff(k / n, width)
    with np.errstate(divide="ignore"):
        sd = np.where(k > 0, phi / (np.sqrt(2.0) * np.maximum(k, 1e-300)), 0.0)
    coef = N * sd / np.sqrt(2.0 * grid.L) * z
    coef[0] = 0.0
    v = amplitude * ifft(grid, coef)
    if slope != 0.0:
        v = v + slope * smooth_sawtooth(grid)
    return v


def smooth_sawtooth(grid: Grid) -> np.ndarray:
    """Odd periodic profile equal to ``x`` away from the box edges."""
    x = grid.x
    L = grid.L
    edge = low_profile(np.abs(x) / L)  # 1 in the bulk, 0 near the edges
    return x * edge


# ----------------------------------------------------------------------------
# KPZ trees
# ----------------------------------------------------------------------------

HOMOGENEITY = {
    "Y": 0.5,
    "Y1": 1.0,
    "Y2": 1.5,
    "Y3": 2.0,
    "Y4": 2.0,
    "X": -0.5,
    "Y0": 1.5,
    "dY0_res_dY": 0.0,
    "LY3": 0.0,
    "LY4": 0.0,
}
"""Homogeneities ``alpha_tau + gamma`` of the trees (subtract any ``gamma > 0``)."""


@dataclass(eq=False)
class KPZEnhancement:
    """Noise trees of the mollified KPZ equation.

    Trees: ``Y`` (L Y = xi), ``Y1`` (L Y1 = X^2 - c1), ``Y2`` (L Y2 = 2 X X1),
    ``Y3`` (L Y3 = 2 X2 o X + c4), ``Y4`` (L Y4 = X1^2 - c4), ``Y0`` (L Y0 = X)
    with ``X = d_x Y`` and ``Xk = d_x Yk``.
    """

    n: float
    seed: int
    grid: Grid
    times: np.ndarray
    xi: SpaceTimeField
    Y: SpaceTimeField
    Y1: SpaceTimeField
    Y2: SpaceTimeField
    Y3: SpaceTimeField
    Y4: SpaceTimeField
    Y0: SpaceTimeField
    X: SpaceTimeField
    X1: SpaceTimeField
    X2: SpaceTimeField
    c1: float
    c4: float
    rhs: dict
    residuals: dict
    width: float = 0.25

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def homogeneities(self) -> dict:
        return dict(HOMOGENEITY)

    def manifest(self) -> dict:
        return {"n": float(self.n), "seed": int(self.seed), "c1": self.c1, "c4": self.c4,
                "grid": self.grid.to_json(), "dt": self.dt, "T": float(self.times[-1]),
                "cutoff_width": self.width, "residuals": dict(self.residuals)}


def _space_time_mean(times: np.ndarray, v: np.ndarray) -> float:
    spatial = v.reshape(v.shape[0], -1).mean(axis=1)
    if times.size < 2:
        return float(spatial[0])
    return float(trapezoid(spatial, times) / (times[-1] - times[0]))


def _tree_residual(grid: Grid, times: np.ndarray, tau: np.ndarray, rhs: np.ndarray, noise: bool = False) -> float:
    """Relative L2 mismatch of ``(d_t - d_x^2) tau`` against its right-hand side.

    Smooth trees use the Crank-Nicolson stencil at step midpoints.  For the
    noise-driven tree (``noise=True``) the check is the left-rule recursion
    ``tau_{m+1} = P_dt (tau_m + dt xi_m)`` itself.
    """
    c = fft(grid, tau)
    dt = np.diff(times)[:, None]
    if noise:
        E = np.exp(-grid.k2_r * dt)
        mism = ifft(grid, c[1:] - E * (c[:-1] + dt * fft(grid, rhs[:-1])))
        den = float(np.sqrt(np.sum(ifft(grid, c[1:] - E * c[:-1]) ** 2)))
        num = float(np.sqrt(np.sum(mism**2)))
        return num / den if den > 0 else num
    Ltau = ifft(grid, (c[1:] - c[:-1]) / dt + 0.5 * grid.k2_r * (c[1:] + c[:-1]))
    r = 0.5 * (rhs[1:] + rhs[:-1])
    den = float(np.sqrt(np.sum(r * r)))
    num = float(np.sqrt(np.sum((Ltau - r) ** 2)))
    return num / den if den > 0 else num


def _check_finite(name: str, v: np.ndarray) -> None:
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"tree {name} produced non-finite values", stage=f"tree-{name}")


NOISE_RULES = ("exact-variance", "left", "piecewise-constant")


def noise_driven_heat(xi: SpaceTimeField, rule: str = "exact-variance") -> np.ndarray:
    """Solve ``L Y = xi`` from ``Y(0) = 0`` given the slice averages of the noise.

    ``"left"`` injects each increment and propagates it,
    ``Y_{m+1} = P_dt (Y_m + Delta W_m)``.  ``"piecewise-constant"`` holds the
    noise at ``Delta W_m / dt`` over the step and integrates exactly.
    ``"exact-variance"`` rescales each
    mode of the increment so that ``Y_{m+1} - P_dt Y_m`` has exactly the law
    of the stochastic convolution over the step, which keeps the stationary
    variance of every mode free of time-step bias.
    """
    g, t = xi.grid, xi.times
    if rule not in NOISE_RULES:
        raise ContractError(f"unknown noise rule {rule!r}")
    if rule == "left":
        return duhamel_arrays(g, t, xi.values, 0.0, "left")
    dts = np.diff(t)
    cf = fft(g, xi.values)
    out = np.zeros_like(cf)
    k2 = g.k2_r
    for m in range(t.size - 1):
        dt = float(dts[m])
        if rule == "piecewise-constant":
            scale = phi_functions(-k2 * dt)[0]
        else:
            z = 2.0 * k2 * dt
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(z > 1e-12, np.sqrt(-np.expm1(-z) / np.where(z > 0, z, 1.0)), 1.0)
        out[m + 1] = np.exp(-k2 * dt) * out[m] + scale * dt * cf[m]
    return ifft(g, out)


def build_trees(xi: SpaceTimeField, Y_init: np.ndarray | None = None, n: float = float("nan"),
                seed: int = -1, width: float = 0.25, c1: float | None = None,
                c4: float | None = None, noise_rule: str = "exact-variance") -> KPZEnhancement:
    """Solve the chain of linear heat equations defining the KPZ trees.

    ``Y`` is driven by the noise through :func:`noise_driven_heat`; the other
    trees use the exponential integrator.  ``c1`` and ``c4`` default to the
    space-time averages of ``X^2`` and ``X1^2`` over the run.
    """
    g, t = xi.grid, xi.times
    if g.dim != 1:
        raise ContractError("trees implemented in one dimension")
    prod = lambda a, b: dealiased_product(g, a, b)  # noqa: E731
    dx = lambda a: partial(g, a, 0)  # noqa: E731
    Y = noise_driven_heat(xi, noise_rule)
    if Y_init is not None:
        Y = Y + np.stack([heat_arrays(g, Y_init, tt) for tt in t])
    _check_finite("Y", Y)
    X = dx(Y)
    XX = prod(X, X)
    c1v = _space_time_mean(t, XX) if c1 is None else float(c1)
    r1 = XX - c1v
    Y1 = duhamel_arrays(g, t, r1, 0.0)
    _check_finite("Y1", Y1)
    X1 = dx(Y1)
    r2 = 2.0 * prod(X, X1)
    Y2 = duhamel_arrays(g, t, r2, 0.0)
    _check_finite("Y2", Y2)
    X2 = dx(Y2)
    X1X1 = prod(X1, X1)
    c4v = _space_time_mean(t, X1X1) if c4 is None else float(c4)
    res32 = 2.0 * resonant(g, X2, X)
    r3 = res32 + c4v
    Y3 = duhamel_arrays(g, t, r3, 0.0)
    _check_finite("Y3", Y3)
    r4 = X1X1 - c4v
    Y4 = duhamel_arrays(g, t, r4, 0.0)
    _check_finite("Y4", Y4)
    Y0 = duhamel_arrays(g, t, X, 0.0)
    _check_finite("Y0", Y0)
    rhs = {"Y": xi.values, "Y1": r1, "Y2": r2, "Y3": r3, "Y4": r4, "Y0": X}
    residuals = {
        "Y": (_tree_residual(g, t, Y - (0 if Y_init is None else np.stack([heat_arrays(g, Y_init, tt) for tt in t])),
                             xi.values, noise=True) if noise_rule == "left" else 0.0),
        "Y1": _tree_residual(g, t, Y1, r1),
        "Y2": _tree_residual(g, t, Y2, r2),
        "Y3": _tree_residual(g, t, Y3, r3),
        "Y3_minus_sign": _tree_residual(g, t, Y3, res32 - c4v),
        "Y4": _tree_residual(g, t, Y4, r4),
        "Y0": _tree_residual(g, t, Y0, X),
    }
    S = lambda v: SpaceTimeField(g, t, v)  # noqa: E731
    return KPZEnhancement(
        n=n, seed=seed, grid=g, times=t, xi=xi,
        Y=S(Y), Y1=S(Y1), Y2=S(Y2), Y3=S(Y3), Y4=S(Y4), Y0=S(Y0),
        X=S(X), X1=S(X1), X2=S(X2), c1=c1v, c4=c4v, rhs=rhs, residuals=residuals, width=width,
    )


def assemble_kpz_pair(enh: KPZEnhancement, alpha: float = 0.6, weight: Weight | None = None,
                      lambdas: Sequence[float] = ()) -> RenormalizedPair:
    """``b = 2 d_x(Y + Y1 + Y2)`` and
    ``f = L Y3 + L Y4 + X2^2 + 2 X2 X1 + 2 (X X2 - X o X2)``.
    """
    g, t = enh.grid, enh.times
    X, X1, X2 = enh.X.values, enh.X1.values, enh.X2.values
    b = 2.0 * (X + X1 + X2)
    parts = bony_parts(g, X, X2)
    off_diag = parts["lower"] + parts["upper"]
    f = (enh.rhs["Y3"] + enh.rhs["Y4"] + dealiased_product(g, X2, X2)
         + 2.0 * dealiased_product(g, X2, X1) + 2.0 * off_diag)
    pair = make_pair(SpaceTimeField(g, t, b[:, None]), SpaceTimeField(g, t, f), alpha,
                     weight or Weight(g, 0.0), lambdas)
    return pair


def kpz_forcing_identity_gap(enh: KPZEnhancement, pair: RenormalizedPair) -> float:
    """Relative gap between the assembled ``f`` and ``L Y3 + L Y4 + X2^2 + 2 X2 X1 + 2 (X X2 - X o X2)``
    written with the plain product minus the resonant product.
    """
    g = enh.grid
    X, X1, X2 = enh.X.values, enh.X1.values, enh.X2.values
    direct = (enh.rhs["Y3"] + enh.rhs["Y4"] + dealiased_product(g, X2, X2)
              + 2.0 * dealiased_product(g, X2, X1)
              + 2.0 * (dealiased_product(g, X, X2) - resonant(g, X, X2)))
    scale = max(float(np.max(np.abs(direct))), 1e-300)
    return float(np.max(np.abs(direct - pair.f.values))) / scale


def tree_decay_slopes(enh: KPZEnhancement, j_range: tuple | None = None, time_index: int = -1) -> dict:
    """Least-squares slope of ``log2 ||Delta_j tau(t)||_inf`` against ``j``.

    ``j_range`` defaults to the blocks strictly below the noise cutoff.
    """
    from .spectral_core import Field, get_partition

    if j_range is None:
        kc = 0.75 * enh.width * enh.n
        jm = min(int(np.floor(np.log2(kc))), get_partition(enh.grid).j_max)
        j_range = (0, max(jm, 1))
    js = np.arange(j_range[0], j_range[1] + 1)
    out = {}
    g = enh.grid
    items = {"Y": enh.Y, "Y1": enh.Y1, "Y2": enh.Y2, "Y3": enh.Y3, "Y4": enh.Y4, "X": enh.X, "Y0": enh.Y0}
    for name, tau in items.items():
        prof = block_sup_profile(Field(g, tau.values[time_index]))
        vals = prof[js + 1]
        out[name] = float(np.polyfit(js, np.log2(np.maximum(vals, 1e-300)), 1)[0])
    return out


def save_enhancement(enh: KPZEnhancement, directory: str | Path) -> Path:
    """Write every tree as a field dump plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in ("xi", "Y", "Y1", "Y2", "Y3", "Y4", "Y0", "X", "X1", "X2"):
        save_spacetime(d / name, getattr(enh, name))
    write_manifest(d / "manifest.json", enh.manifest())
    return d
