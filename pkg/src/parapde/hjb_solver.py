"""Hamilton-Jacobi-Bellman equations with function and distributional drifts.

The classical engine integrates
``d_t v = tr(a . grad^2 v) + B . grad v + H(t, x, v, grad v) + f``
with an exponential Runge-Kutta scheme (Laplacian exact, everything else
explicit).  The singular pipeline splits ``u = u1 + u2`` into a linear
paracontrolled part and a nonlinear part whose transport term is handled by
the same paracontrolled fixed point.  The Zvonkin map that removes the rough
part of the drift is built as an audit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import map_coordinates

from .enhancement import RenormalizedPair, resonant_drift_drift
from .errors import BlowUpError, ConfigError, ContractError, NumericalError, ShapeError
from .heat_ops import duhamel_arrays
from .linear_para_solver import SolverConfig, solve_linear, solve_weighted
from .paracalc import LocalizationPlan, localize_arrays, para_lower_mod
from .spectral_core import (
    Field,
    Grid,
    SpaceTimeField,
    dealiased_product,
    fft,
    grad,
    ifft,
    partial,
    smooth_step,
)
from .weighted_spaces import Weight

__all__ = [
    "Hamiltonian",
    "mollify_hamiltonian",
    "HJBProblem",
    "HJBConfig",
    "HJBResult",
    "solve_hjb_classical",
    "etdrk4_coefficients",
    "max_principle_ratio",
    "derivative_energy_monitor",
    "ZvonkinMap",
    "build_zvonkin",
    "invert_map",
    "compose",
    "transform_coefficients",
    "SingularHJBResult",
    "solve_singular_hjb",
    "split_initial_value",
]

log = logging.getLogger(__name__)

HFunc = Callable[[float, tuple, np.ndarray, np.ndarray], np.ndarray]


# ----------------------------------------------------------------------------
# nonlinearities
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Hamiltonian:
    """Nonlinearity ``H(t, x, v, Q)``.

    Families
    --------
    ``power``
        ``coef * |Q|^zeta`` with ``zeta`` in ``[0, 2)``.
    ``quadratic``
        ``coef * |Q|^2``; products are dealiased.
    ``general``
        ``func(t, coords, v, Q)`` with ``Q`` carrying the component axis first.
    """

    family: str
    coef: float = 1.0
    zeta: float = 2.0
    func: HFunc | None = None

    def __post_init__(self):
        if self.family not in ("power", "quadratic", "general", "zero"):
            raise ContractError(f"unknown Hamiltonian family {self.family!r}")
        if self.family == "power" and not (0.0 <= self.zeta < 2.0):
            raise ContractError("power family needs zeta in [0, 2)")
        if self.family == "general" and self.func is None:
            raise ContractError("general family needs a callable")

    @classmethod
    def zero(cls) -> "Hamiltonian":
        return cls("zero", 0.0)

    @classmethod
    def quadratic(cls, coef: float = 1.0) -> "Hamiltonian":
        return cls("quadratic", float(coef))

    @classmethod
    def power(cls, zeta: float, coef: float = 1.0) -> "Hamiltonian":
        return cls("power", float(coef), float(zeta))

    @classmethod
    def general(cls, func: HFunc) -> "Hamiltonian":
        return cls("general", func=func)

    def __call__(self, grid: Grid, t: float, v: np.ndarray, Q: np.ndarray) -> np.ndarray:
        """Evaluate on a grid; ``Q`` has shape ``(dim, *grid.shape)``."""
        if self.family == "zero":
            return np.zeros_like(v)
        if self.family == "quadratic":
            return self.coef * sum(dealiased_product(grid, Q[i], Q[i]) for i in range(grid.dim))
        if self.family == "power":
            q2 = np.sum(Q * Q, axis=0)
            return self.coef * q2 ** (0.5 * self.zeta)
        return np.asarray(self.func(t, grid.coords, v, Q), dtype=float)

    def batch(self, grid: Grid, times: np.ndarray, v: np.ndarray, Q: np.ndarray) -> np.ndarray:
        """Evaluate on space-time arrays ``v (M, ...)`` and ``Q (M, dim, ...)``."""
        if self.family == "quadratic":
            return self.coef * sum(dealiased_product(grid, Q[:, i], Q[:, i]) for i in range(grid.dim))
        if self.family == "zero":
            return np.zeros_like(v)
        return np.stack([self(grid, float(t), v[m], Q[m]) for m, t in enumerate(times)])

    def to_json(self) -> dict:
        return {"family": self.family, "coef": self.coef, "zeta": self.zeta}


def mollify_hamiltonian(H: Hamiltonian, n: float, order: int = 5) -> Hamiltonian:
    """``H_n(t,x,v,Q) = ((H chi_n) * rho_n)(v, Q) chi_n(x)``.

    The mollifier in ``(v, Q)`` is Gaussian with standard deviation ``1/n``,
    applied with a tensor Gauss-Hermite rule of ``order`` nodes per variable;
    ``chi_n(y) = chi(y/n)`` with ``chi = 1`` on ``|y| <= 1`` and ``0`` beyond 2.
    """
    if n <= 0:
        raise ContractError("mollification level must be positive")
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / weights.sum()

    def chi(r):
        # 1 on r <= n, 0 on r >= 2n
        return 1.0 - smooth_step(np.asarray(r, dtype=float) / n - 1.0)

    def func(t, coords, v, Q):
        dim = Q.shape[0]
        acc = np.zeros_like(v, dtype=float)
        grid_pts = np.stack(np.meshgrid(*([nodes] * (dim + 1)), indexing="ij"), axis=-1).reshape(-1, dim + 1)
        grid_w = np.prod(np.stack(np.meshgrid(*([weights] * (dim + 1)), indexing="ij"), axis=-1).reshape(-1, dim + 1), axis=1)
        for pt, w in zip(grid_pts, grid_w):
            vv = v + pt[0] / n
            QQ = Q + pt[1:].reshape((dim,) + (1,) * v.ndim) / n
            rad = np.sqrt(vv * vv + np.sum(QQ * QQ, axis=0))
            acc = acc + w * _eval_pointwise(H, t, coords, vv, QQ) * chi(rad)
        rx = np.sqrt(sum(c * c for c in coords))
        return acc * chi(rx)

    return Hamiltonian.general(func)


def _eval_pointwise(H: Hamiltonian, t, coords, v, Q) -> np.ndarray:
    if H.family == "zero":
        return np.zeros_like(v)
    if H.family == "quadratic":
        return H.coef * np.sum(Q * Q, axis=0)
    if H.family == "power":
        return H.coef * np.sum(Q * Q, axis=0) ** (0.5 * H.zeta)
    return np.asarray(H.func(t, coords, v, Q), dtype=float)


# ----------------------------------------------------------------------------
# classical problem
# ----------------------------------------------------------------------------


@dataclass(eq=False)
class HJBProblem:
    """``d_t v = tr(a grad^2 v) + B . grad v + H(t, x, v, grad v) + f``, ``v(0) = v0``.

    ``a`` has shape ``(M, d, d, ...)`` and ``B`` shape ``(M, d, ...)`` on the
    time grid ``times``; ``None`` means identity and zero.  ``delta``,
    ``delta1`` and ``eta`` are weight exponents carried for the diagnostics.
    """

    grid: Grid
    times: np.ndarray
    v0: np.ndarray
    H: Hamiltonian = field(default_factory=Hamiltonian.zero)
    a: np.ndarray | None = None
    B: np.ndarray | None = None
    f: np.ndarray | None = None
    delta: float = 0.0
    delta1: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        g = self.grid
        self.times = np.asarray(self.times, dtype=float)
        M = self.times.size
        self.v0 = np.asarray(self.v0.values if isinstance(self.v0, Field) else self.v0, dtype=float)
        if self.v0.shape != g.shape:
            raise ShapeError("v0 does not live on the grid")
        if self.a is not None and self.a.shape != (M, g.dim, g.dim) + g.shape:
            raise ShapeError("a must have shape (M, d, d, *grid)")
        if self.B is not None and self.B.shape != (M, g.dim) + g.shape:
            raise ShapeError("B must have shape (M, d, *grid)")
        if self.f is not None and self.f.shape != (M,) + g.shape:
            raise ShapeError("f must have shape (M, *grid)")
        for name in ("a", "B", "f"):
            arr = getattr(self, name)
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ContractError(f"coefficient {name} is not finite")

    def ellipticity(self, n_dirs: int = 16) -> float:
        """Largest ``c0`` with ``c0 |xi|^2 <= xi^T a xi <= |xi|^2 / c0`` on sampled unit ``xi``."""
        if self.a is None:
            return 1.0
        d = self.grid.dim
        if d == 1:
            dirs = np.ones((1, 1))
        else:
            ang = np.linspace(0, np.pi, n_dirs, endpoint=False)
            dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        lo, hi = np.inf, 0.0
        for xi in dirs:
            q = np.einsum("i,mij...,j->m...", xi, self.a, xi)
            lo = min(lo, float(np.min(q)))
            hi = max(hi, float(np.max(q)))
        return float(min(lo, 1.0 / hi)) if hi > 0 else 0.0

    def ellipticity_band(self, n_dirs: int = 16) -> tuple:
        """``(min, max)`` of ``xi^T a xi`` over sampled unit directions."""
        if self.a is None:
            return (1.0, 1.0)
        d = self.grid.dim
        dirs = np.ones((1, 1)) if d == 1 else np.stack(
            [np.cos(np.linspace(0, np.pi, n_dirs, endpoint=False)), np.sin(np.linspace(0, np.pi, n_dirs, endpoint=False))], axis=1)
        vals = [np.einsum("i,mij...,j->m...", xi, self.a, xi) for xi in dirs]
        return float(min(np.min(v) for v in vals)), float(max(np.max(v) for v in vals))

    def holder_modulus(self, alpha: float) -> float:
        """``sup |a(t,x) - a(t,y)| / |x - y|^alpha`` over grid shifts up to a quarter period."""
        if self.a is None:
            return 0.0
        g = self.grid
        best = 0.0
        for ax in range(g.dim):
            for s in range(1, g.N // 4 + 1):
                diff = np.abs(np.roll(self.a, s, axis=3 + ax) - self.a)
                best = max(best, float(np.max(diff)) / (s * g.h) ** alpha)
        return best

    def coefficient_at(self, name: str, t: float) -> np.ndarray | None:
        arr = getattr(self, name)
        if arr is None:
            return None
        ts = self.times
        if t <= ts[0]:
            return arr[0]
        if t >= ts[-1]:
            return arr[-1]
        m = int(np.searchsorted(ts, t) - 1)
        w = (t - ts[m]) / (ts[m + 1] - ts[m])
        return (1.0 - w) * arr[m] + w * arr[m + 1]

    def to_json(self) -> dict:
        return {"grid": self.grid.to_json(), "T": float(self.times[-1]), "n_times": int(self.times.size),
                "H": self.H.to_json(), "identity_diffusion": self.a is None, "drift": self.B is not None,
                "delta": self.delta, "delta1": self.delta1, "eta": self.eta}


@dataclass(frozen=True)
class HJBConfig:
    """Stepper settings.

    ``scheme`` is ``"etdrk4"`` (exponential fourth-order Runge-Kutta) or
    ``"imex-euler"``; ``substeps`` refines each interval of the problem time
    grid; ``cap`` is the blow-up threshold on ``sup |v|``.
    """

    scheme: str = "etdrk4"
    substeps: int = 1
    cap: float = 1e8
    contour_points: int = 32

    def __post_init__(self):
        if self.scheme not in ("etdrk4", "imex-euler"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")


@dataclass(eq=False)
class HJBResult:
    v: SpaceTimeField
    residuals: np.ndarray
    c0: float
    holder_modulus: float
    steps: int

    def manifest(self) -> dict:
        return {"c0": self.c0, "holder_modulus": self.holder_modulus, "steps": self.steps,
                "max_residual": float(np.max(self.residuals)) if self.residuals.size else 0.0}


def etdrk4_coefficients(Lhat: np.ndarray, dt: float, n_points: int = 32) -> tuple:
    """Contour-integral coefficients of the fourth-order exponential Runge-Kutta scheme.

    Returns ``(E, E2, Q, f1, f2, f3)`` for the diagonal linear part ``Lhat``.
    """
    E = np.exp(dt * Lhat)
    E2 = np.exp(0.5 * dt * Lhat)
    r = np.exp(1j * np.pi * (np.arange(1, n_points + 1) - 0.5) / n_points)
    LR = dt * Lhat[..., None] + r
    Q = dt * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=-1))
    f1 = dt * np.real(np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR**2)) / LR**3, axis=-1))
    f2 = dt * np.real(np.mean((2 + LR + np.exp(LR) * (-2 + LR)) / LR**3, axis=-1))
    f3 = dt * np.real(np.mean((-4 - 3 * LR - LR**2 + np.exp(LR) * (4 - LR)) / LR**3, axis=-1))
    return E, E2, Q, f1, f2, f3


def _explicit_part(prob: HJBProblem, t: float, v: np.ndarray) -> np.ndarray:
    g = prob.grid
    gv = grad(g, v)
    out = prob.H(g, t, v, gv)
    a = prob.coefficient_at("a", t)
    if a is not None:
        for i in range(g.dim):
            for j in range(g.dim):
                aij = a[i, j] - (1.0 if i == j else 0.0)
                if np.any(aij):
                    out = out + dealiased_product(g, aij, partial(g, gv[j], i))
    B = prob.coefficient_at("B", t)
    if B is not None:
        for i in range(g.dim):
            out = out + dealiased_product(g, B[i], gv[i])
    f = prob.coefficient_at("f", t)
    if f is not None:
        out = out + f
    return out


def _check_cfl(prob: HJBProblem, dt: float) -> None:
    if prob.a is None:
        return
    d = prob.grid.dim
    eye = np.eye(d).reshape((1, d, d) + (1,) * d)
    dev = float(np.max(np.abs(prob.a - eye)))
    if dev > 0 and dt > prob.grid.h**2 / (4.0 * dev):
        raise ConfigError(f"time step {dt:.3g} violates dt <= h^2 / (4 max|a - I|) = {prob.grid.h**2 / (4 * dev):.3g}")


def solve_hjb_classical(prob: HJBProblem, cfg: HJBConfig | None = None) -> HJBResult:
    """Integrate the classical HJB problem on its time grid.

    Raises
    ------
    BlowUpError
        When ``sup |v|`` exceeds ``cfg.cap`` or turns non-finite.
    ConfigError
        When the explicit diffusion correction violates the step restriction.
    """
    cfg = cfg or HJBConfig()
    g = prob.grid
    ts = prob.times
    if ts.size < 2:
        raise ContractError("need at least two time slices")
    steps = np.diff(ts) / cfg.substeps
    _check_cfl(prob, float(np.min(steps)))
    Lhat = -g.k2_r
    out = np.empty((ts.size,) + g.shape)
    out[0] = prob.v0
    v = prob.v0.copy()
    cache: dict = {}
    nstep = 0
    for m in range(ts.size - 1):
        dt = float(steps[m])
        key = round(dt, 15)
        if key not in cache:
            cache[key] = (etdrk4_coefficients(Lhat, dt, cfg.contour_points) if cfg.scheme == "etdrk4"
                          else (np.exp(dt * Lhat), _phi1(dt * Lhat) * dt))
        co = cache[key]
        t = float(ts[m])
        for _ in range(cfg.substeps):
            v = _step(prob, v, t, dt, co, cfg.scheme)
            t += dt
            nstep += 1
            sup = float(np.max(np.abs(v)))
            if not math.isfinite(sup) or sup > cfg.cap:
                raise BlowUpError(f"sup|v| = {sup:.3e} exceeded the cap at t = {t:.6g}", time=t,
                                  data={"cap": cfg.cap})
        out[m + 1] = v
    vfield = SpaceTimeField(g, ts, out)
    res = _classical_residuals(prob, out)
    return HJBResult(vfield, res, prob.ellipticity(), prob.holder_modulus(0.5), nstep)


def _phi1(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < 1e-6
    zz = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2, np.expm1(zz) / zz)


def _step(prob: HJBProblem, v: np.ndarray, t: float, dt: float, co: tuple, scheme: str) -> np.ndarray:
    g = prob.grid
    if scheme == "imex-euler":
        E, P = co
        return ifft(g, E * fft(g, v) + P * fft(g, _explicit_part(prob, t, v)))
    E, E2, Q, f1, f2, f3 = co
    vh = fft(g, v)
    Nv = fft(g, _explicit_part(prob, t, v))
    ah = E2 * vh + Q * Nv
    Na = fft(g, _explicit_part(prob, t + dt / 2, ifft(g, ah)))
    bh = E2 * vh + Q * Na
    Nb = fft(g, _explicit_part(prob, t + dt / 2, ifft(g, bh)))
    ch = E2 * ah + Q * (2 * Nb - Nv)
    Nc = fft(g, _explicit_part(prob, t + dt, ifft(g, ch)))
    return ifft(g, E * vh + f1 * Nv + 2 * f2 * (Na + Nb) + f3 * Nc)


def _classical_residuals(prob: HJBProblem, v: np.ndarray) -> np.ndarray:
    """Per-step sup of ``d_t v - Delta v - N(v)`` at midpoints (Crank-Nicolson stencil)."""
    g = prob.grid
    ts = prob.times
    c = fft(g, v)
    dt = np.diff(ts).reshape((-1,) + (1,) * g.dim)
    lin = ifft(g, (c[1:] - c[:-1]) / dt + 0.5 * g.k2_r * (c[1:] + c[:-1]))
    res = np.empty(ts.size - 1)
    for m in range(ts.size - 1):
        nm = 0.5 * (_explicit_part(prob, float(ts[m]), v[m]) + _explicit_part(prob, float(ts[m + 1]), v[m + 1]))
        res[m] = float(np.max(np.abs(lin[m] - nm)))
    return res


def max_principle_ratio(v: SpaceTimeField, v0: np.ndarray, weight: Weight | None = None, c2: float = 0.0) -> float:
    """``||v||_{L^inf(rho)} / (c2 + ||v0||_{L^inf(rho)})``."""
    rho = 1.0 if weight is None else weight.values
    num = float(np.max(np.abs(v.values * rho)))
    den = c2 + float(np.max(np.abs(np.asarray(v0) * rho)))
    return num / den if den > 0 else (0.0 if num == 0 else math.inf)


def derivative_energy_monitor(v: SpaceTimeField, p: float = 4.0, eta: float = 0.0) -> dict:
    """Track ``E(t) = (1/p) int |w rho_eta|^p`` with ``w = grad v`` and the dissipation
    ``D(t) = int |w|^{p-2} |grad w|^2 rho_eta^p``.

    Returns the series and ``balance = dE/dt + D`` at step midpoints.
    """
    g = v.grid
    rho = Weight(g, eta).values
    w = grad(g, v.values)
    wa = np.sqrt(np.sum(w * w, axis=1))
    E = np.sum((wa * rho) ** p, axis=tuple(range(1, 1 + g.dim))) * g.cell_volume / p
    gw2 = np.zeros_like(wa)
    for i in range(g.dim):
        for j in range(g.dim):
            gw2 += partial(g, w[:, i], j) ** 2
    D = np.sum(wa ** (p - 2) * gw2 * rho**p, axis=tuple(range(1, 1 + g.dim))) * g.cell_volume
    dE = np.diff(E) / np.diff(v.times)
    bal = dE + 0.5 * (D[1:] + D[:-1])
    return {"energy": E, "dissipation": D, "balance": bal}


# ----------------------------------------------------------------------------
# Zvonkin transformation
# ----------------------------------------------------------------------------


@dataclass(eq=False)
class ZvonkinMap:
    """``Phi(t, x) = x + u(t, x)`` with ``u`` solving the vector transport equation.

    ``b_smooth`` and ``bbar_smooth`` hold ``b_<=`` and ``bbar_<=``.
    """

    u_vec: SpaceTimeField
    lam: float
    grad_sup: float
    bilipschitz: tuple
    b_smooth: np.ndarray
    bbar_smooth: np.ndarray
    iterations: tuple = ()

    @property
    def grid(self) -> Grid:
        return self.u_vec.grid

    @property
    def below_threshold(self) -> bool:
        return self.grad_sup <= 0.5

    def phi(self) -> np.ndarray:
        """``Phi`` on the grid: shape ``(M, d, ...)``."""
        g = self.grid
        X = np.stack(g.coords)
        return X[None] + self.u_vec.values

    def jacobian(self) -> np.ndarray:
        """``J[m, k, i] = d_k Phi^i``."""
        g = self.grid
        du = np.stack([partial(g, self.u_vec.values, k) for k in range(g.dim)], axis=1)
        eye = np.eye(g.dim).reshape((1, g.dim, g.dim) + (1,) * g.dim)
        return du + eye

    def to_json(self) -> dict:
        return {"lambda": self.lam, "grad_sup": self.grad_sup, "bilipschitz": list(self.bilipschitz),
                "iterations": list(self.iterations)}


def _bilipschitz_band(grid: Grid, u: np.ndarray, n_shifts: int = 32) -> tuple:
    """Min and max of ``|Phi(x) - Phi(y)| / |x - y|`` over grid shifts along each axis."""
    lo, hi = np.inf, 0.0
    shifts = np.unique(np.linspace(1, grid.N // 2, n_shifts).astype(int))
    for ax in range(grid.dim):
        for s in shifts:
            du = np.roll(u, -s, axis=2 + ax) - u
            dx = s * grid.h
            disp = du.copy()
            disp[:, ax] += dx
            q = np.sqrt(np.sum(disp * disp, axis=1)) / dx
            lo = min(lo, float(np.min(q)))
            hi = max(hi, float(np.max(q)))
    return lo, hi


def build_zvonkin(pair: RenormalizedPair, plan: LocalizationPlan, lam: float,
                  cfg: SolverConfig | None = None) -> ZvonkinMap:
    """Solve ``L_lam u = (b_> - bbar_<=) . (grad u + I)``, ``u(0) = 0``.

    ``b_>, b_<=`` come from ``localize``; ``bbar = b_> o grad I_lam b_>`` is
    computed directly and localized in turn.  Each component of ``u`` is one
    paracontrolled linear solve.
    """
    g = pair.grid
    t = pair.times
    b = pair.b.values
    b_hi, b_lo = localize_arrays(plan, b)
    bbar = resonant_drift_drift(SpaceTimeField(g, t, b_hi), lam)
    _, bbar_lo = localize_arrays(plan, bbar)
    beta = b_hi - bbar_lo
    if not np.any(beta):
        u = np.zeros_like(b)
        return ZvonkinMap(SpaceTimeField(g, t, u), float(lam), 0.0, (1.0, 1.0), b_lo, bbar_lo, ())
    from .enhancement import make_pair

    comps = []
    its = []
    base = None
    for j in range(g.dim):
        sub = make_pair(SpaceTimeField(g, t, beta), SpaceTimeField(g, t, beta[:, j]), pair.alpha, pair.weight)
        if base is not None:
            sub.resonant_bb.update(base.resonant_bb)
        sol = solve_linear(sub, None, lam, cfg)
        base = sub
        comps.append(sol.u.values)
        its.append(sol.iterations)
    u = np.stack(comps, axis=1)
    gs = max(float(np.max(np.abs(partial(g, u, k)))) for k in range(g.dim))
    band = _bilipschitz_band(g, u)
    if gs > 0.5:
        log.warning("Zvonkin gradient %.3g exceeds 1/2 at lambda = %g; raise lambda", gs, lam)
    return ZvonkinMap(SpaceTimeField(g, t, u), float(lam), gs, band, b_lo, bbar_lo, tuple(its))


def _sample(grid: Grid, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Periodic cubic-spline interpolation of ``values`` at physical ``points`` (shape ``(d, ...)``)."""
    idx = [(points[i] + grid.L) / grid.h for i in range(grid.dim)]
    return map_coordinates(values, idx, order=3, mode="grid-wrap")


def invert_map(grid: Grid, u: np.ndarray, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Grid samples of ``Phi^{-1}(y) - y`` for one time slice, ``u`` of shape ``(d, ...)``.

    One dimension: monotone interpolation of the unwrapped graph of ``Phi``.
    Higher dimension: fixed point ``x <- y - u(x)``.
    """
    d = grid.dim
    y = np.stack(grid.coords)
    if d == 1:
        x = grid.x
        phi = x + u[0]
        if np.any(np.diff(phi) <= 0):
            raise NumericalError("map is not monotone", stage="map-degenerate")
        P = 2 * grid.L
        xs = np.concatenate([x - P, x, x + P])
        ps = np.concatenate([phi - P, phi, phi + P])
        inv = np.interp(x, ps, xs)
        return (inv - x)[None]
    xk = y.copy()
    prev = np.inf
    for _ in range(max_iter):
        ux = np.stack([_sample(grid, u[i], xk) for i in range(d)])
        new = y - ux
        err = float(np.max(np.abs(new - xk)))
        xk = new
        if err < tol:
            return xk - y
        if err > prev and err > 1e-6:
            raise NumericalError("inverse fixed point does not contract", stage="map-degenerate")
        prev = err
    raise NumericalError("inverse fixed point did not converge", stage="map-degenerate")


def compose(grid: Grid, values: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """``values(y + disp(y))`` on the grid for a scalar slice."""
    y = np.stack(grid.coords)
    return _sample(grid, values, y + disp)


def transform_coefficients(zmap: ZvonkinMap, pair: RenormalizedPair, u1: SpaceTimeField,
                           H: Hamiltonian, v0: np.ndarray | None = None) -> tuple:
    """Coefficients of the equation for ``v = u2 o Phi^{-1}``.

    ``a_ij = sum_k (d_k Phi^i d_k Phi^j) o Phi^{-1}``,
    ``B = ((b_<= + bbar_<=) . grad Phi + lam u) o Phi^{-1}`` and
    ``H~(t, x, v, Q) = H(u1 + v, grad u1 + grad Phi . Q) o Phi^{-1}``.

    Returns the problem and a report with the ellipticity band and the round
    trip error ``max |Phi^{-1}(Phi(x)) - x|``.
    """
    g = zmap.grid
    t = zmap.u_vec.times
    M, d = t.size, g.dim
    J = zmap.jacobian()  # (M, k, i, ...)
    u = zmap.u_vec.values
    a = np.empty((M, d, d) + g.shape)
    B = np.empty((M, d) + g.shape)
    u1x = grad(g, u1.values)
    inv_disp = np.empty((M, d) + g.shape)
    round_trip = 0.0
    drift = zmap.b_smooth + zmap.bbar_smooth
    for m in range(M):
        disp = invert_map(g, u[m])
        inv_disp[m] = disp
        # round trip: Phi^{-1}(Phi(x)) - x
        phi_pts = np.stack(g.coords) + u[m]
        back = np.stack([_sample(g, disp[i], phi_pts) for i in range(d)])
        wrap = lambda z: (z + g.L) % (2 * g.L) - g.L  # noqa: E731
        round_trip = max(round_trip, float(np.max(np.abs(wrap(u[m] + back)))))
        for i in range(d):
            for j in range(d):
                aij = sum(J[m, k, i] * J[m, k, j] for k in range(d))
                a[m, i, j] = compose(g, aij, disp)
            Bi = sum(drift[m, k] * J[m, k, i] for k in range(d)) + zmap.lam * u[m, i]
            B[m, i] = compose(g, Bi, disp)
    composed: dict = {}

    def pulled_back(m):
        # u1, grad u1 and grad Phi evaluated at Phi^{-1}(x)
        if m not in composed:
            disp = inv_disp[m]
            composed[m] = (
                compose(g, u1.values[m], disp),
                np.stack([compose(g, u1x[m, k], disp) for k in range(d)]),
                np.stack([[compose(g, J[m, k, i], disp) for i in range(d)] for k in range(d)]),
                tuple(np.stack(g.coords) + disp),
            )
        return composed[m]

    def Ht(tt, coords, v, Q):
        m = int(np.argmin(np.abs(t - tt)))
        u1c, gu1c, Jc, ycoords = pulled_back(m)
        Qt = np.stack([gu1c[k] + sum(Jc[k, i] * Q[i] for i in range(d)) for k in range(d)])
        return _eval_pointwise(H, tt, ycoords, u1c + v, Qt)

    prob = HJBProblem(g, t, np.zeros(g.shape) if v0 is None else v0, Hamiltonian.general(Ht), a=a, B=B)
    lo, hi = prob.ellipticity_band()
    report = {"ellipticity_min": lo, "ellipticity_max": hi, "round_trip": round_trip,
              "B_sup": float(np.max(np.abs(B))), "grad_sup": zmap.grad_sup}
    return prob, report


# ----------------------------------------------------------------------------
# singular HJB
# ----------------------------------------------------------------------------


def split_initial_value(phi: np.ndarray, plan: LocalizationPlan) -> tuple:
    """``phi = phi1 + phi2`` with ``phi1`` the localized high-frequency part."""
    grid = plan.grid
    single = LocalizationPlan(grid, np.zeros(1), plan.L, plan.a, plan.b, plan.n_space, 1)
    hi, lo = localize_arrays(single, np.asarray(phi, dtype=float)[None])
    return hi[0], lo[0]


@dataclass(eq=False)
class SingularHJBResult:
    u: SpaceTimeField
    u_sharp: SpaceTimeField
    u1: SpaceTimeField
    u2: SpaceTimeField
    iterations: tuple
    residuals: np.ndarray
    audit: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        return {"iterations": list(self.iterations),
                "max_residual": float(np.max(self.residuals)) if self.residuals.size else 0.0,
                "audit": self.audit}


def solve_singular_hjb(pair: RenormalizedPair, H: Hamiltonian, phi: np.ndarray | Field,
                       cfg: SolverConfig | None = None, plan: LocalizationPlan | None = None,
                       audit_lambda: float | None = None) -> SingularHJBResult:
    """Solve ``L u = b <> grad u + H(u, grad u) + f``, ``u(0) = phi``.

    ``u1`` solves the linear problem with forcing ``f`` from ``phi1``;
    ``u2`` solves the nonlinear problem with zero forcing from ``phi2``, the
    nonlinearity ``H(u1 + u2, grad u1 + grad u2)`` being re-evaluated at every
    iterate of the paracontrolled fixed point.  With ``audit_lambda`` the
    Zvonkin map and transformed coefficients are built and summarized.
    """
    cfg = cfg or SolverConfig()
    g = pair.grid
    t = pair.times
    phi = np.asarray(phi.values if isinstance(phi, Field) else phi, dtype=float)
    if plan is None:
        plan = LocalizationPlan(g, t, L=float(get_default_level(g)))
    phi1, phi2 = split_initial_value(phi, plan)
    stages = {}
    try:
        sol1, rep1 = solve_weighted(pair, phi1, cfg, report=False)
    except NumericalError as exc:
        exc.stage = f"u1:{exc.stage}"
        raise
    stages["u1"] = rep1
    u1 = sol1.u.values
    gu1 = grad(g, u1)
    zero = pair.f.like(np.zeros_like(pair.f.values))
    pair2 = pair.with_forcing(zero)

    def nonlinear(u2, gu2):
        return H.batch(g, t, u1 + u2, gu1 + gu2)

    try:
        sol2 = solve_linear(pair2, phi2, 0.0, cfg, extra_forcing=nonlinear)
    except NumericalError as exc:
        exc.stage = f"u2:{exc.stage}"
        raise
    u = u1 + sol2.u.values
    Ib = duhamel_arrays(g, t, pair.b.values, 0.0, cfg.quadrature)
    gu = grad(g, u)
    para = sum(para_lower_mod(g, t, gu[:, j], Ib[:, j]) for j in range(g.dim))
    If = duhamel_arrays(g, t, pair.f.values, 0.0, cfg.quadrature)
    sharp = u - para - If
    audit = {}
    if audit_lambda is not None:
        zmap = build_zvonkin(pair, plan, audit_lambda, cfg)
        audit = dict(zmap.to_json())
        if zmap.bilipschitz[0] > 0:
            try:
                _, rep = transform_coefficients(zmap, pair, sol1.u, H)
                audit.update(rep)
            except NumericalError as exc:
                audit["transform_error"] = str(exc)
    res = np.maximum(sol1.residuals, sol2.residuals)
    return SingularHJBResult(pair.f.like(u), pair.f.like(sharp), sol1.u, sol2.u,
                             (sol1.iterations, sol2.iterations), res, audit)


def get_default_level(grid: Grid) -> int:
    """Default base level of the localization: the middle dyadic block."""
    from .spectral_core import get_partition

    return max(get_partition(grid).j_max // 2, 0)
