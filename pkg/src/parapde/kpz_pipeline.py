"""End-to-end KPZ runs and the Cole-Hopf reference.

A run samples the mollified noise, builds the trees, assembles the pair
``(b, f)`` with ``b = 2 (X + X1 + X2)``, solves
``L h~ = b d_x h~ + (d_x h~)^2 + f`` with the singular HJB solver and
reconstructs ``h = Y + Y1 + Y2 + h~``.  The reference solves the stochastic
heat equation ``d_t w = d_x^2 w + w xi`` (Ito) on the same noise increments
and returns ``log w``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .enhancement import (
    KPZEnhancement,
    assemble_kpz_pair,
    brownian_bridge_initial,
    build_trees,
    kpz_forcing_identity_gap,
    noise_variance_rate,
    sample_noise,
    save_enhancement,
)
from .errors import ConfigError, NumericalError
from .hjb_solver import Hamiltonian, etdrk4_coefficients, solve_singular_hjb
from .linear_para_solver import SolverConfig
from .paracalc import LocalizationPlan
from .serialization import save_spacetime, write_csv, write_manifest
from .spectral_core import Grid, SpaceTimeField, dealiased_product, fft, ifft
from .weighted_spaces import Weight

__all__ = [
    "KPZConfig",
    "KPZRun",
    "initial_profile",
    "run_kpz",
    "cole_hopf_reference",
    "fit_drift",
    "discrepancy",
    "compare_levels",
    "invariance_probe",
    "InvarianceReport",
    "save_run",
]

H0_KINDS = ("stationary", "flat", "sine")


@dataclass(frozen=True)
class KPZConfig:
    """Settings of a KPZ run.

    Parameters
    ----------
    N : int
        Grid points on ``[-L, L)``.
    T, dt : float
        Horizon and time step.
    L : float, optional
        Half period; defaults to the mollification level ``n``.
    width : float
        Support width of the noise cutoff ``phi`` in units of ``n``.
    noise_rule : str
        How the noise enters ``Y`` (see :func:`parapde.enhancement.noise_driven_heat`).
        The reference uses the same convention: with the default
        ``"piecewise-constant"`` both solvers see the noise frozen at
        ``Delta W_m / dt`` over each step (a random PDE with an explicit Ito
        correction in the reference), with ``"left"`` both inject increments.
    reference_substeps : int
        Exponential Runge-Kutta substeps per step in the reference.
    h0 : str
        ``"stationary"`` (Brownian-type ``Y(0)``, ``h~(0) = 0``), ``"flat"``
        or ``"sine"`` (smooth ``h~(0)``, ``Y(0) = 0``).
    slope : float
        Coefficient of the smooth sawtooth added to the stationary profile.
    shift : float
        Constant added to ``h0``.
    eta : float
        Weight exponent of the comparison norm ``L^inf(rho_eta)``.
    noise : bool
        ``False`` replaces the noise by zero.
    """

    N: int = 512
    T: float = 0.25
    dt: float = 1e-3
    L: float | None = None
    width: float = 0.25
    noise_rule: str = "piecewise-constant"
    reference_substeps: int = 4
    h0: str = "stationary"
    slope: float = 0.0
    shift: float = 0.0
    eta: float = 0.0
    alpha: float = 0.6
    noise: bool = True
    tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        if self.h0 not in H0_KINDS:
            raise ConfigError(f"unknown initial profile {self.h0!r}")
        if not (self.T > 0 and self.dt > 0 and self.dt <= self.T):
            raise ConfigError("need 0 < dt <= T")
        if self.noise_rule not in ("left", "piecewise-constant"):
            raise ConfigError("the reference supports the 'left' and 'piecewise-constant' noise rules")
        if self.reference_substeps < 1:
            raise ConfigError("reference_substeps must be >= 1")
        if self.N < 16 or self.N & (self.N - 1):
            raise ConfigError("N must be a power of two >= 16")

    def grid(self, n: float) -> Grid:
        return Grid(1, self.N, float(n) if self.L is None else float(self.L))

    def times(self) -> np.ndarray:
        M = int(round(self.T / self.dt))
        if abs(M * self.dt - self.T) > 1e-9 * self.T:
            raise ConfigError("T must be a multiple of dt")
        return np.linspace(0.0, self.T, M + 1)

    def to_json(self) -> dict:
        return dict(self.__dict__)


def initial_profile(n: float, seed: int, grid: Grid, cfg: KPZConfig) -> tuple:
    """``(Y(0), h~(0))`` for the configured initial condition."""
    if cfg.h0 == "stationary":
        Y0 = brownian_bridge_initial(n, seed, grid, cfg.width, cfg.slope)
        return Y0, np.full(grid.shape, cfg.shift)
    if cfg.h0 == "flat":
        return np.zeros(grid.shape), np.full(grid.shape, cfg.shift)
    ht = np.log(1.0 + 0.5 * np.sin(np.pi * grid.x / grid.L)) + cfg.shift
    return np.zeros(grid.shape), ht


@dataclass(eq=False)
class KPZRun:
    n: float
    seed: int
    cfg: KPZConfig
    enh: KPZEnhancement
    h_tilde: SpaceTimeField
    h: SpaceTimeField
    h_colehopf: SpaceTimeField | None = None
    drift: float = float("nan")
    error: float = float("nan")
    error_curve: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def assembly_gap(self) -> float:
        """``max |h - Y - Y1 - Y2 - h~|``."""
        e = self.enh
        return float(np.max(np.abs(self.h.values - e.Y.values - e.Y1.values - e.Y2.values - self.h_tilde.values)))

    def manifest(self) -> dict:
        return {"n": float(self.n), "seed": int(self.seed), "config": self.cfg.to_json(),
                "enhancement": self.enh.manifest(), "drift": self.drift, "discrepancy": self.error,
                "diagnostics": self.diagnostics,
                "reference": {"convention": "ito", "noise_rule": self.cfg.noise_rule,
                              "correction": 0.5 * noise_variance_rate(self.enh.grid, self.n, self.cfg.width)}}


def _noise(n: float, seed: int, grid: Grid, times: np.ndarray, cfg: KPZConfig) -> SpaceTimeField:
    xi = sample_noise(n, seed, grid, times, cfg.width)
    if not cfg.noise:
        xi = xi.like(np.zeros_like(xi.values))
    return xi


def run_kpz(n: float, seed: int, cfg: KPZConfig | None = None, reference: bool = True) -> KPZRun:
    """Paracontrolled KPZ solve at mollification level ``n``; optionally also the reference."""
    cfg = cfg or KPZConfig()
    grid = cfg.grid(n)
    times = cfg.times()
    xi = _noise(n, seed, grid, times, cfg)
    Y0, ht0 = initial_profile(n, seed, grid, cfg)
    enh = build_trees(xi, Y0, n, seed, cfg.width, noise_rule=cfg.noise_rule)
    pair = assemble_kpz_pair(enh, cfg.alpha)
    scfg = SolverConfig(tol=cfg.tol, max_iter=cfg.max_iter)
    plan = LocalizationPlan(grid, times, L=float(max(_level(grid) // 2, 0)))
    try:
        sol = solve_singular_hjb(pair, Hamiltonian.quadratic(1.0), ht0, scfg, plan)
    except NumericalError as exc:
        exc.stage = f"kpz:{exc.stage}"
        raise
    h = enh.Y.values + enh.Y1.values + enh.Y2.values + sol.u.values
    run = KPZRun(n, seed, cfg, enh, sol.u, SpaceTimeField(grid, times, h))
    run.diagnostics = {"iterations": list(sol.iterations), "forcing_identity_gap": kpz_forcing_identity_gap(enh, pair),
                       "max_residual": float(np.max(sol.residuals)), "c1": enh.c1, "c4": enh.c4}
    if reference:
        ch = cole_hopf_reference(n, seed, cfg, xi=xi, h0=Y0 + ht0)
        run.h_colehopf = ch
        c, err, curve = discrepancy(run.h, ch, Weight(grid, cfg.eta))
        run.drift, run.error, run.error_curve = c, err, curve
    return run


def _level(grid: Grid) -> int:
    from .spectral_core import get_partition

    return get_partition(grid).j_max


def cole_hopf_reference(n: float, seed: int, cfg: KPZConfig | None = None, xi: SpaceTimeField | None = None,
                        h0: np.ndarray | None = None) -> SpaceTimeField:
    """``log w`` for ``d_t w = d_x^2 w + w xi`` (Ito), ``w(0) = e^{h0}``.

    ``sigma^2`` is the pointwise variance rate of the mollified noise.  With
    the ``"piecewise-constant"`` rule each step solves
    ``d_t w = d_x^2 w + (xi_m - sigma^2 / 2) w`` by exponential Runge-Kutta
    substeps; with ``"left"`` each step multiplies by
    ``exp(Delta W - sigma^2 dt / 2)`` (the exact solution of ``dw = w dW``)
    and then applies the heat semigroup.

    Raises
    ------
    NumericalError
        With stage ``"reference-failure"`` when ``w`` loses positivity.
    """
    cfg = cfg or KPZConfig()
    grid = cfg.grid(n)
    times = cfg.times()
    if xi is None:
        xi = _noise(n, seed, grid, times, cfg)
    if h0 is None:
        Y0, ht0 = initial_profile(n, seed, grid, cfg)
        h0 = Y0 + ht0
    sig2 = noise_variance_rate(grid, n, cfg.width) if cfg.noise else 0.0
    dts = np.diff(times)
    out = np.empty((times.size,) + grid.shape)
    out[0] = h0
    offset = float(np.max(h0))
    w = np.exp(h0 - offset)
    k2 = grid.k2_r
    sub = cfg.reference_substeps
    coeffs: dict = {}
    for m in range(times.size - 1):
        dt = float(dts[m])
        if cfg.noise_rule == "left":
            w = w * np.exp(xi.values[m] * dt - 0.5 * sig2 * dt)
            w = ifft(grid, np.exp(-k2 * dt) * fft(grid, w))
        else:
            # d_t w = d_x^2 w + (xi_m - sigma^2/2) w with the potential frozen over the step
            h = dt / sub
            key = round(h, 15)
            if key not in coeffs:
                coeffs[key] = etdrk4_coefficients(-k2, h)
            pot = xi.values[m] - 0.5 * sig2
            for _ in range(sub):
                w = _etdrk4_linear(grid, w, pot, coeffs[key])
        wmin = float(np.min(w))
        if not wmin > 0:
            raise NumericalError(f"reference lost positivity at t = {times[m + 1]:.6g} (min w = {wmin:.3e})",
                                 stage="reference-failure", data={"time": float(times[m + 1])})
        s = float(np.max(w))
        w = w / s
        offset += math.log(s)
        out[m + 1] = np.log(w) + offset
    return SpaceTimeField(grid, times, out)


def _etdrk4_linear(grid: Grid, w: np.ndarray, pot: np.ndarray, co: tuple) -> np.ndarray:
    """One exponential Runge-Kutta step of ``d_t w = d_x^2 w + pot * w``."""
    E, E2, Q, f1, f2, f3 = co
    N = lambda v: fft(grid, dealiased_product(grid, pot, v))  # noqa: E731
    wh = fft(grid, w)
    Nw = N(w)
    ah = E2 * wh + Q * Nw
    Na = N(ifft(grid, ah))
    bh = E2 * wh + Q * Na
    Nb = N(ifft(grid, bh))
    ch = E2 * ah + Q * (2 * Nb - Nw)
    Nc = N(ifft(grid, ch))
    return ifft(grid, E * wh + f1 * Nw + 2 * f2 * (Na + Nb) + f3 * Nc)


def fit_drift(diff: np.ndarray, times: np.ndarray) -> float:
    """Least-squares ``c`` in ``diff(t, x) ~ c t``."""
    mean = diff.reshape(diff.shape[0], -1).mean(axis=1)
    den = float(np.sum(times**2))
    return float(np.sum(times * mean) / den) if den > 0 else 0.0


def discrepancy(h: SpaceTimeField, h_ref: SpaceTimeField, weight: Weight | None = None) -> tuple:
    """``(c, sup_t ||h - h_ref - c t||_{L^inf(rho)}, per-time curve)`` with ``c`` from :func:`fit_drift`."""
    diff = h.values - h_ref.values
    c = fit_drift(diff, h.times)
    rho = 1.0 if weight is None else weight.values
    resid = (diff - c * h.times.reshape((-1,) + (1,) * (diff.ndim - 1))) * rho
    curve = np.max(np.abs(resid).reshape(diff.shape[0], -1), axis=1)
    return c, float(np.max(curve)), curve


def compare_levels(seed: int, levels: Sequence[float] = (8, 16, 32), cfg: KPZConfig | None = None) -> dict:
    """Discrepancies against the reference for each level at a matched seed."""
    cfg = cfg or KPZConfig()
    errs, drifts = [], []
    for n in levels:
        run = run_kpz(n, seed, cfg)
        errs.append(run.error)
        drifts.append(run.drift)
    dec = all(b < a for a, b in zip(errs, errs[1:]))
    return {"seed": int(seed), "levels": [float(n) for n in levels], "errors": errs, "drifts": drifts,
            "strictly_decreasing": dec}


@dataclass(frozen=True)
class InvarianceReport:
    lags: tuple
    ratio: tuple
    zscores: tuple
    n_runs: int

    def to_json(self) -> dict:
        return {"lags": list(self.lags), "ratio": list(self.ratio), "zscores": list(self.zscores), "n_runs": self.n_runs}


def _increment_variance(grid: Grid, h: np.ndarray, lag: int) -> float:
    return float(np.mean((np.roll(h, -lag) - h) ** 2))


def invariance_probe(runs: Sequence[KPZRun], lags: Sequence[int] | None = None, time_index: int = -1) -> InvarianceReport:
    """Compare spatial increment variances of ``h(T)`` and ``h(0)`` across runs.

    The ratio of the ensemble means is reported together with a z-score
    computed from the per-run paired differences.
    """
    if not runs:
        raise ConfigError("no runs supplied")
    grid = runs[0].h.grid
    if lags is None:
        max_lag = max(1, int(grid.N / 16))  # lag length <= L/8
        lags = sorted({1, max(1, max_lag // 4), max(1, max_lag // 2), max_lag})
    ratio, zs = [], []
    for lag in lags:
        v0 = np.array([_increment_variance(grid, r.h.values[0], lag) for r in runs])
        vT = np.array([_increment_variance(grid, r.h.values[time_index], lag) for r in runs])
        ratio.append(float(vT.mean() / v0.mean()) if v0.mean() > 0 else float("nan"))
        d = vT - v0
        se = float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else float("nan")
        zs.append(float(d.mean() / se) if se > 0 else 0.0)
    return InvarianceReport(tuple(int(x) for x in lags), tuple(ratio), tuple(zs), len(runs))


def save_run(run: KPZRun, directory: str | Path, dumps: bool = True) -> Path:
    """Manifest, error-curve CSV and (optionally) field dumps of a run."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_manifest(d / "manifest.json", run.manifest())
    if run.error_curve is not None:
        write_csv(d / "error_curve.csv", ["t", "discrepancy"], zip(run.h.times, run.error_curve))
    if dumps:
        save_spacetime(d / "h", run.h)
        save_spacetime(d / "h_tilde", run.h_tilde)
        if run.h_colehopf is not None:
            save_spacetime(d / "h_colehopf", run.h_colehopf)
        save_enhancement(run.enh, d / "enhancement")
    return d


def with_overrides(cfg: KPZConfig, **kw) -> KPZConfig:
    return replace(cfg, **kw)
