"""Heat semigroup, damped Duhamel operator and Schauder diagnostics.

``P_t`` is the Fourier multiplier ``exp(-|k|^2 t)``.  The Duhamel operator
``I_lam f(t) = int_0^t exp(-lam (t-s)) P_{t-s} f(s) ds`` is evaluated by
exponential time differencing on the time grid of ``f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, RangeError, ShapeError
from .serialization import write_csv
from .spectral_core import Field, Grid, SpaceTimeField, _wrap, fft, ifft
from .weighted_spaces import Weight, block_sup_profile, parabolic_norm

__all__ = [
    "heat",
    "heat_arrays",
    "DuhamelConfig",
    "QUADRATURES",
    "duhamel",
    "duhamel_arrays",
    "duhamel_window",
    "windowed_family",
    "damped_from_windows",
    "apply_parabolic",
    "parabolic_residual",
    "schauder_probe",
    "SchauderReport",
    "LAMBDA_GRID",
    "phi_functions",
]

QUADRATURES = ("left", "trapezoid", "exponential-integrator")
LAMBDA_GRID = (0.0, 1.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 4096.0)


def heat_arrays(grid: Grid, a: np.ndarray, t: float) -> np.ndarray:
    if t < 0:
        raise RangeError(f"heat semigroup needs t >= 0, got {t}")
    if t == 0:
        return np.array(a, dtype=float, copy=True)
    return ifft(grid, np.exp(-grid.k2_r * t) * fft(grid, a))


def heat(f, t: float):
    """``P_t f``; ``P_0`` is the identity."""
    return _wrap(f, heat_arrays(f.grid, f.values, t))


@dataclass(frozen=True)
class DuhamelConfig:
    """Settings of the Duhamel operator.

    Parameters
    ----------
    lam : float
        Damping ``lambda >= 0``.
    dt : float, optional
        Step; when given it must match the time grid of the forcing.
    quadrature : str
        ``"exponential-integrator"`` (default) propagates modes exactly and
        integrates the forcing interpolated linearly over each step, so it is
        exact for time-constant and piecewise-linear forcing.  ``"left"``
        is the left rectangle rule ``dt P_dt f(t_m)``, which injects a forcing
        increment and then propagates it.  ``"trapezoid"`` applies the
        trapezoidal rule to the Duhamel integral.
    """

    lam: float = 0.0
    dt: float | None = None
    quadrature: str = "exponential-integrator"

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise RangeError("lambda must be finite and >= 0")
        if self.dt is not None and not self.dt > 0:
            raise RangeError("dt must be positive")
        if self.quadrature not in QUADRATURES:
            raise ContractError(f"unknown quadrature {self.quadrature!r}")


def phi_functions(z: np.ndarray) -> tuple:
    """``phi1(z) = (e^z - 1)/z`` and ``phi2(z) = (e^z - 1 - z)/z^2`` (stable for small z)."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    e = np.expm1(zs)
    p1 = np.where(small, 1.0 + z / 2.0 + z * z / 6.0 + z**3 / 24.0, e / zs)
    p2 = np.where(small, 0.5 + z / 6.0 + z * z / 24.0 + z**3 / 120.0, (e - zs) / (zs * zs))
    return p1, p2


def _rates(grid: Grid, lam: float) -> np.ndarray:
    return grid.k2_r + lam


def _step_coefficients(grid: Grid, lam: float, dt: float, quadrature: str) -> tuple:
    r = _rates(grid, lam)
    z = -r * dt
    E = np.exp(z)
    if quadrature == "exponential-integrator":
        p1, p2 = phi_functions(z)
        # u+ = E u + dt[(p1 - p2) f_m + p2 f_{m+1}]
        return E, dt * (p1 - p2), dt * p2
    if quadrature == "left":
        # left rectangle rule: u+ = E (u + dt f_m)
        return E, dt * E, np.zeros_like(E)
    return E, 0.5 * dt * E, 0.5 * dt * np.ones_like(E)


def duhamel_arrays(grid: Grid, times: np.ndarray, f: np.ndarray, lam: float = 0.0,
                   quadrature: str = "exponential-integrator", u0: np.ndarray | None = None,
                   coeffs: bool = False) -> np.ndarray:
    """Solve ``(d_t - Delta + lam) u = f``, ``u(0) = u0`` (default 0), on ``times``.

    ``f`` has time on axis 0.  Returns real samples, or Fourier coefficients
    when ``coeffs`` is true.
    """
    times = np.asarray(times, dtype=float)
    M1 = times.size
    if f.shape[0] != M1:
        raise ShapeError("forcing and time grid disagree")
    cf = fft(grid, f)
    out = np.empty_like(cf)
    out[0] = 0.0 if u0 is None else fft(grid, u0)
    if M1 > 1:
        dts = np.diff(times)
        uniform = np.max(np.abs(dts - dts[0])) <= 1e-9 * dts[0] * M1
        if uniform:
            E, A, B = _step_coefficients(grid, lam, float(dts[0]), quadrature)
            for m in range(M1 - 1):
                out[m + 1] = E * out[m] + A * cf[m] + B * cf[m + 1]
        else:
            for m in range(M1 - 1):
                E, A, B = _step_coefficients(grid, lam, float(dts[m]), quadrature)
                out[m + 1] = E * out[m] + A * cf[m] + B * cf[m + 1]
    if coeffs:
        return out
    return ifft(grid, out)


def duhamel(f: SpaceTimeField, cfg: DuhamelConfig | None = None, u0: Field | None = None) -> SpaceTimeField:
    """``I_lam f`` on the time grid of ``f`` (optionally with initial value ``u0``)."""
    cfg = cfg or DuhamelConfig()
    if cfg.dt is not None and f.n_steps > 0 and abs(f.dt - cfg.dt) > 1e-12 * cfg.dt:
        raise ContractError("configured dt does not match the forcing time grid")
    v = duhamel_arrays(f.grid, f.times, f.values, cfg.lam, cfg.quadrature,
                       None if u0 is None else u0.values)
    return f.like(v)


def _time_index(times: np.ndarray, t: float) -> int:
    m = int(np.argmin(np.abs(times - t)))
    tol = 1e-9 * max(1.0, abs(t))
    if abs(times[m] - t) > tol:
        raise RangeError(f"time {t} is not on the time grid")
    return m


def _increments(grid: Grid, times: np.ndarray, cf: np.ndarray, quadrature: str) -> np.ndarray:
    """Per-step Duhamel increments ``int_{t_m}^{t_{m+1}} P_{t_{m+1}-r} f(r) dr`` (coefficients)."""
    dt = float(times[1] - times[0])
    _, A, B = _step_coefficients(grid, 0.0, dt, quadrature)
    return A * cf[:-1] + B * cf[1:]


def duhamel_window(f: SpaceTimeField, s: float, t: float,
                   quadrature: str = "exponential-integrator") -> Field:
    """Windowed Duhamel integral ``int_s^t P_{t-r} f(r) dr``."""
    if s > t:
        raise RangeError("window needs s <= t")
    if s < f.times[0] - 1e-12 or t > f.times[-1] + 1e-12:
        raise RangeError("window outside the time grid")
    ms, mt = _time_index(f.times, s), _time_index(f.times, t)
    grid = f.grid
    if ms == mt:
        return Field(grid, np.zeros(f.values.shape[1:]))
    sub = f.values[ms: mt + 1]
    u = duhamel_arrays(grid, f.times[ms: mt + 1], sub, 0.0, quadrature, coeffs=True)
    return Field(grid, ifft(grid, u[-1]))


def windowed_family(f: SpaceTimeField, t: float, quadrature: str = "exponential-integrator") -> SpaceTimeField:
    """``s -> I^t_s f`` for every grid time ``s <= t`` (returned on ``times[:m_t+1]``)."""
    grid = f.grid
    mt = _time_index(f.times, t)
    times = f.times[: mt + 1]
    out_shape = (mt + 1,) + f.values.shape[1:]
    if mt == 0:
        return SpaceTimeField(grid, times, np.zeros(out_shape))
    cf = fft(grid, f.values[: mt + 1])
    D = _increments(grid, times, cf, quadrature)
    W = np.zeros_like(cf)
    for m in range(mt - 1, -1, -1):
        W[m] = W[m + 1] + np.exp(-grid.k2_r * (times[mt] - times[m + 1])) * D[m]
    return SpaceTimeField(grid, times, ifft(grid, W))


def damped_from_windows(windows: SpaceTimeField, lam: float) -> np.ndarray:
    """Recover ``I_lam f(t)`` from the window family at time ``t``.

    Uses ``I_lam f(t) = e^{-lam t} I^t_0 f + lam int_0^t e^{-lam (t-s)} I^t_s f ds``
    with the trapezoidal rule in ``s``.
    """
    s = windows.times
    t = s[-1]
    W = windows.values
    out = np.exp(-lam * t) * W[0]
    if lam > 0 and s.size > 1:
        w = lam * np.exp(-lam * (t - s))
        ds = np.diff(s)
        tw = np.zeros_like(s)
        tw[:-1] += 0.5 * ds
        tw[1:] += 0.5 * ds
        out = out + np.tensordot(w * tw, W, axes=(0, 0))
    return out


# ----------------------------------------------------------------------------
# residuals
# ----------------------------------------------------------------------------


def apply_parabolic(u: SpaceTimeField, lam: float = 0.0) -> SpaceTimeField:
    """Discrete ``(d_t - Delta + lam) u`` at step midpoints (Crank-Nicolson stencil)."""
    if u.n_steps < 1:
        raise ContractError("need at least two time slices")
    g = u.grid
    c = fft(g, u.values)
    dt = np.diff(u.times).reshape((-1,) + (1,) * (c.ndim - 1))
    r = _rates(g, lam)
    mid = (c[1:] - c[:-1]) / dt + 0.5 * r * (c[1:] + c[:-1])
    tm = 0.5 * (u.times[1:] + u.times[:-1])
    return SpaceTimeField(g, tm, ifft(g, mid))


def parabolic_residual(u: SpaceTimeField, f: SpaceTimeField, lam: float = 0.0) -> float:
    """Relative ``L^2`` mismatch between ``(d_t - Delta + lam) u`` and ``f`` at midpoints."""
    Lu = apply_parabolic(u, lam).values
    fm = 0.5 * (f.values[1:] + f.values[:-1])
    den = float(np.sqrt(np.sum(fm**2)))
    return float(np.sqrt(np.sum((Lu - fm) ** 2))) / (den if den > 0 else 1.0)


# ----------------------------------------------------------------------------
# Schauder diagnostics
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SchauderReport:
    lambdas: tuple
    norms: tuple
    slope: float
    expected_slope: float
    theta: float
    alpha: float
    q: float

    def to_json(self) -> dict:
        return {
            "lambdas": list(self.lambdas),
            "norms": list(self.norms),
            "slope": self.slope,
            "expected_slope": self.expected_slope,
            "theta": self.theta,
            "alpha": self.alpha,
            "q": "inf" if math.isinf(self.q) else self.q,
        }

    def write_csv(self, path) -> None:
        write_csv(path, ["lambda", "norm"], zip(self.lambdas, self.norms))


def schauder_probe(f: SpaceTimeField, theta: float, alpha: float, q: float,
                   lambdas: Sequence[float], weight: Weight | None = None,
                   quadrature: str = "exponential-integrator") -> SchauderReport:
    """Measure ``lam -> ||I_lam f||_{S^{theta-alpha}_T}`` and its log-log slope.

    The expected slope is ``theta/2 + 1/q - 1`` (for ``lam >= 1``).
    """
    if not (0.0 < alpha <= 1.0):
        raise ContractError("alpha must lie in (0, 1]")
    if not (alpha < theta <= 2.0):
        raise ContractError("theta must lie in (alpha, 2]")
    inv_q = 0.0 if math.isinf(q) else 1.0 / q
    if theta < 2.0 and inv_q > (2.0 - theta) / 2.0 + 1e-12:
        raise ContractError("q must satisfy q >= 2/(2 - theta)")
    if theta == 2.0 and inv_q > 0:
        raise ContractError("theta = 2 requires q = inf")
    norms = []
    for lam in lambdas:
        u = duhamel(f, DuhamelConfig(lam=float(lam), quadrature=quadrature))
        norms.append(parabolic_norm(u, theta - alpha, weight) if theta - alpha < 2 else float("nan"))
    lam_arr = np.asarray(lambdas, dtype=float)
    nrm = np.asarray(norms)
    ok = (lam_arr > 0) & (nrm > 0)
    slope = float(np.polyfit(np.log(lam_arr[ok]), np.log(nrm[ok]), 1)[0]) if ok.sum() >= 2 else float("nan")
    return SchauderReport(tuple(float(l) for l in lambdas), tuple(norms), slope,
                          theta / 2.0 + inv_q - 1.0, theta, alpha, float(q))


def block_decay_rate(f: Field, t: float) -> np.ndarray:
    """Per-block ``-log(||Delta_j P_t f|| / ||Delta_j f||) / (4^j t)``."""
    before = block_sup_profile(f)
    after = block_sup_profile(heat(f, t))
    j = np.arange(-1, before.size - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = -np.log(after / before) / (4.0**j * t)
    return rate
