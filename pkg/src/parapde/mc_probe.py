"""Monte Carlo checks: exponential moments of diffusions and Feynman-Kac.

Paths live on the real line (positions are not wrapped); periodic
coefficients are evaluated at the wrapped position while weights see the
true distance from the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericalError
from .spectral_core import Grid, SpaceTimeField

__all__ = [
    "SDESpec",
    "euler_maruyama",
    "exp_moment",
    "exp_moment_sweep",
    "envelope_slope",
    "feynman_kac_check",
    "FeynmanKacReport",
    "interpolate_periodic",
]

Coef = Callable[[float, np.ndarray], np.ndarray]


def _zero(t, x):
    return np.zeros_like(x)


@dataclass(frozen=True)
class SDESpec:
    """``dX = b(t, X) dt + sigma(t, X) dW``, ``X_0 = x0`` (one dimension).

    ``drift`` and ``sigma`` are vectorized callables of ``(t, x)``; a float
    ``sigma`` means a constant diffusion coefficient.
    """

    x0: float
    T: float
    dt: float
    n_paths: int = 10_000
    seed: int = 0
    drift: Coef = _zero
    sigma: Coef | float = math.sqrt(2.0)

    def __post_init__(self):
        if not (self.T >= 0 and self.dt > 0):
            raise ConfigError("need T >= 0 and dt > 0")
        if self.n_paths < 1:
            raise ConfigError("need at least one path")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.dt - 1e-12)) if self.T > 0 else 0

    def sigma_at(self, t: float, x: np.ndarray) -> np.ndarray:
        if callable(self.sigma):
            return np.asarray(self.sigma(t, x), dtype=float)
        return np.full_like(x, float(self.sigma))

    def check_growth(self, xs: np.ndarray | None = None) -> dict:
        """Sampled ``sup |sigma|`` and ``sup |b| / <x>``."""
        xs = np.linspace(-50, 50, 1001) if xs is None else xs
        ts = np.linspace(0, max(self.T, 1e-12), 5)
        sig = max(float(np.max(np.abs(self.sigma_at(t, xs)))) for t in ts)
        ratio = max(float(np.max(np.abs(self.drift(t, xs)) / np.sqrt(1 + xs**2))) for t in ts)
        return {"sigma_sup": sig, "drift_growth": ratio}


def euler_maruyama(spec: SDESpec, running: Callable[[np.ndarray], np.ndarray] | None = None) -> tuple:
    """Simulate paths; return final positions and the running max of ``running(X)``."""
    rng = np.random.default_rng(spec.seed)
    x = np.full(spec.n_paths, float(spec.x0))
    run = None if running is None else running(x)
    t = 0.0
    for m in range(spec.n_steps):
        h = min(spec.dt, spec.T - t)
        dw = rng.standard_normal(spec.n_paths) * math.sqrt(h)
        x = x + spec.drift(t, x) * h + spec.sigma_at(t, x) * dw
        t += h
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite path values; reduce dt", stage="step-size")
        if running is not None:
            run = np.maximum(run, running(x))
    return x, run


def _pairwise_mean(a: np.ndarray) -> float:
    """Mean with deterministic pairwise summation."""
    a = np.asarray(a, dtype=float)
    n = a.size
    if n == 0:
        return 0.0
    while a.size > 1:
        if a.size % 2:
            a = np.append(a, 0.0)
        a = a[0::2] + a[1::2]
    return float(a[0]) / n


def exp_moment(spec: SDESpec, gamma: float, alpha: float, n_boot: int = 400, level: float = 0.95) -> tuple:
    """``E exp(gamma sup_t <X_t>^alpha)`` with a percentile bootstrap interval.

    Returns ``(estimate, (lo, hi))``.  The estimate is computed in log space
    to avoid overflow.
    """
    if not (0.0 <= alpha < 2.0):
        raise ContractError("alpha must lie in [0, 2)")
    if not gamma > 0:
        raise ContractError("gamma must be positive")
    _, run = euler_maruyama(spec, lambda x: (1.0 + x * x) ** (0.5 * alpha))
    z = gamma * run
    zmax = float(np.max(z))
    w = np.exp(z - zmax)
    est = zmax + math.log(_pairwise_mean(w))
    rng = np.random.default_rng([spec.seed, 1])
    idx = rng.integers(0, w.size, size=(n_boot, w.size))
    boots = zmax + np.log(np.mean(w[idx], axis=1))
    lo, hi = np.quantile(boots, [(1 - level) / 2, 1 - (1 - level) / 2])
    return math.exp(est), (math.exp(float(lo)), math.exp(float(hi)))


def exp_moment_sweep(x0s: Sequence[float], gamma: float, alpha: float, T: float = 1.0, dt: float = 1e-2,
                     n_paths: int = 10_000, seed: int = 0, sigma: float = math.sqrt(2.0)) -> list:
    """Rows ``(x0, estimate, ci_lo, ci_hi)`` for the driftless diffusion."""
    rows = []
    for i, x0 in enumerate(x0s):
        spec = SDESpec(float(x0), T, dt, n_paths, seed + i, sigma=sigma)
        est, (lo, hi) = exp_moment(spec, gamma, alpha)
        rows.append((float(x0), est, lo, hi))
    return rows


def envelope_slope(rows: Sequence[tuple], alpha: float) -> float:
    """Least-squares slope of ``log estimate`` against ``<x0>^alpha``."""
    xs = np.array([(1 + r[0] ** 2) ** (0.5 * alpha) for r in rows])
    ys = np.log([r[1] for r in rows])
    return float(np.polyfit(xs, ys, 1)[0])


def interpolate_periodic(grid: Grid, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Trigonometric interpolation of a one-dimensional periodic field at arbitrary points."""
    if grid.dim != 1:
        raise ContractError("periodic interpolation implemented in one dimension")
    c = np.fft.rfft(values) / grid.N
    k = grid.k_r[0]
    wts = np.full(k.size, 2.0)
    wts[0] = 1.0
    if grid.N % 2 == 0:
        wts[-1] = 1.0
    ph = np.exp(1j * np.outer(np.asarray(x, dtype=float) + grid.L, k))
    return np.real(ph @ (wts * c))


@dataclass(frozen=True)
class FeynmanKacReport:
    points: tuple
    estimates: tuple
    pde: tuple
    std_errors: tuple
    zscores: tuple
    n_paths: int

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.zscores))) if self.zscores else 0.0

    def to_json(self) -> dict:
        return {"points": [list(p) for p in self.points], "estimates": list(self.estimates), "pde": list(self.pde),
                "std_errors": list(self.std_errors), "zscores": list(self.zscores), "n_paths": self.n_paths}


def feynman_kac_check(v_pde: SpaceTimeField, v0: np.ndarray, points: Sequence[tuple], n_paths: int = 10_000,
                      dt: float = 1e-3, seed: int = 0, drift: np.ndarray | None = None) -> FeynmanKacReport:
    """Compare ``v(t, x) = E v0(X^x_t)`` with the PDE solution at test points.

    The PDE is ``d_t v = Delta v + B . grad v`` (``H = 0``, ``a = I``), whose
    backward representation uses ``dX = B(t - s, X) ds + sqrt(2) dW``.
    ``drift`` (shape ``(M, N)`` on the solution's time grid) defaults to 0.
    """
    grid = v_pde.grid
    if grid.dim != 1:
        raise ContractError("Feynman-Kac check implemented in one dimension")
    times = v_pde.times
    ests, pdes, ses, zs = [], [], [], []
    for i, (t, x) in enumerate(points):
        m = int(np.argmin(np.abs(times - t)))
        pde_val = float(interpolate_periodic(grid, v_pde.values[m], np.array([x]))[0])
        if t <= 0:
            val = float(interpolate_periodic(grid, v0, np.array([x]))[0])
            ests.append(val)
            pdes.append(pde_val)
            ses.append(0.0)
            zs.append(0.0)
            continue
        if drift is None:
            bfun = _zero
        else:
            def bfun(s, y, t=t):
                mm = int(np.argmin(np.abs(times - (t - s))))
                yw = (y + grid.L) % (2 * grid.L) - grid.L
                return interpolate_periodic(grid, drift[mm], yw)
        spec = SDESpec(float(x), float(t), dt, n_paths, seed + i, drift=bfun, sigma=math.sqrt(2.0))
        xT, _ = euler_maruyama(spec)
        wrapped = (xT + grid.L) % (2 * grid.L) - grid.L
        samples = interpolate_periodic(grid, v0, wrapped)
        est = float(np.mean(samples))
        se = float(np.std(samples, ddof=1) / math.sqrt(n_paths))
        ests.append(est)
        pdes.append(pde_val)
        ses.append(se)
        zs.append((est - pde_val) / se if se > 0 else 0.0)
    return FeynmanKacReport(tuple(tuple(p) for p in points), tuple(ests), tuple(pdes), tuple(ses), tuple(zs), n_paths)
