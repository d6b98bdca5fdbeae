"""Paracontrolled solver for ``(d_t - Delta + lam) u = b . grad u + f``.

The solution is sought in the form ``u = grad u << I_lam b + u# + I_lam f``.
The resonant product ``b o grad u`` is rebuilt from the controller, the
remainder ``u#`` and the stored resonant data of the pair; each fixed-point
step is one Duhamel solve over the whole interval.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .enhancement import RenormalizedPair, resonant_drift_forcing
from .errors import ConfigError, ContractError, IterationFailure, ShapeError
from .heat_ops import QUADRATURES, apply_parabolic, duhamel_arrays
from .paracalc import commutator_arrays, mollification_resolution, para_lower, para_lower_mod, resonant
from .spectral_core import Field, Grid, SpaceTimeField, dealiased_product, grad, laplacian, partial
from .weighted_spaces import Weight, localized_norm, parabolic_norm

__all__ = [
    "SolverConfig",
    "ParacontrolledSolution",
    "reconstruct_resonant",
    "resonant_addends",
    "transport_product",
    "solve_linear",
    "solve_weighted",
    "damping_scan",
    "DampingScan",
    "weighted_exponent",
]

log = logging.getLogger(__name__)

ForcingFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SolverConfig:
    """Fixed-point settings.

    Parameters
    ----------
    tol : float
        Stop when the sup-norm change between iterates drops below ``tol``
        (relative to ``max(1, sup|u|)``).
    max_iter : int
    quadrature : str
        Duhamel quadrature, see :class:`parapde.heat_ops.DuhamelConfig`.
    consistency_factor : float
        Ansatz violations above ``consistency_factor * tol`` are errors.
    """

    tol: float = 1e-8
    max_iter: int = 200
    quadrature: str = "exponential-integrator"
    consistency_factor: float = 10.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.quadrature not in QUADRATURES:
            raise ConfigError(f"unknown quadrature {self.quadrature!r}")


@dataclass(eq=False)
class ParacontrolledSolution:
    """Converged solution of the paracontrolled fixed point.

    ``controller`` is the gradient used in the ``<<`` slot of the ansatz;
    ``forcing_part`` is ``I_lam f``.  ``u0`` is the initial value (shifted
    out during the solve and added back).
    """

    u: SpaceTimeField
    u_sharp: SpaceTimeField
    resonant_bu: SpaceTimeField
    lam: float
    residuals: np.ndarray
    controller: np.ndarray
    forcing_part: np.ndarray
    iterations: int
    changes: list = field(default_factory=list)
    u0: np.ndarray | None = None
    resolution_ratio: float = float("nan")

    @property
    def times(self) -> np.ndarray:
        return self.u.times

    def ansatz_defect(self, Ib: np.ndarray) -> float:
        """``sup |u - u0 - grad u << I_lam b - I_lam f - u#|`` relative to ``sup |u|``."""
        g = self.u.grid
        ubar = self.u.values - (0.0 if self.u0 is None else self.u0)
        gu = grad(g, ubar)
        para = sum(para_lower_mod(g, self.times, gu[:, j], Ib[:, j]) for j in range(g.dim))
        d = ubar - para - self.forcing_part - self.u_sharp.values
        return float(np.max(np.abs(d))) / max(1.0, float(np.max(np.abs(self.u.values))))

    def manifest(self, tol: float) -> dict:
        return {"lambda": self.lam, "tol": tol, "iterations": self.iterations,
                "residuals": [float(r) for r in self.residuals], "changes": list(self.changes),
                "mollification_resolution": self.resolution_ratio}


# ----------------------------------------------------------------------------
# the reconstruction of b o grad u
# ----------------------------------------------------------------------------


@dataclass(eq=False)
class _Precomputed:
    Ib: np.ndarray  # (M, d, ...)
    dIb: np.ndarray  # (M, d_i, d_j, ...)   d_i I b_j
    rbb: np.ndarray  # (M, d_j, ...)


def _precompute(pair: RenormalizedPair, lam: float, quadrature: str) -> _Precomputed:
    g = pair.grid
    Ib = duhamel_arrays(g, pair.times, pair.b.values, lam, quadrature)
    dIb = np.stack([partial(g, Ib, i) for i in range(g.dim)], axis=1)
    return _Precomputed(Ib, dIb, pair.rbb(lam))


def resonant_addends(pair: RenormalizedPair, controller: np.ndarray, u_sharp: np.ndarray,
                     rbf: np.ndarray, pre: _Precomputed) -> dict:
    """The six addends whose sum is ``b o grad u`` for ``u = g << I b + u# + I f``.

    Keys: ``second_order`` (``b o (grad^2 u < I b)``), ``drift_resonant``
    (``(b o grad I b) . grad u``), ``commutator``, ``time_commutator``
    (``b o grad(g << I b - g < I b)``), ``remainder`` (``b o grad u#``) and
    ``forcing_resonant`` (``b o grad I f``).
    """
    g = pair.grid
    t = pair.times
    b = pair.b.values
    d = g.dim
    M = t.size
    out = {k: np.zeros((M,) + g.shape) for k in
           ("second_order", "drift_resonant", "commutator", "time_commutator", "remainder")}
    for j in range(d):
        gj = controller[:, j]
        out["drift_resonant"] += dealiased_product(g, gj, pre.rbb[:, j])
        diff = para_lower_mod(g, t, gj, pre.Ib[:, j]) - para_lower(g, gj, pre.Ib[:, j])
        for i in range(d):
            bi = b[:, i]
            out["second_order"] += resonant(g, bi, para_lower(g, partial(g, gj, i), pre.Ib[:, j]))
            out["commutator"] += commutator_arrays(g, gj, pre.dIb[:, i, j], bi)
            out["time_commutator"] += resonant(g, bi, partial(g, diff, i))
    for i in range(d):
        out["remainder"] += resonant(g, b[:, i], partial(g, u_sharp, i))
    out["forcing_resonant"] = rbf
    return out


def _sum_addends(parts: dict) -> np.ndarray:
    keys = ("second_order", "drift_resonant", "commutator", "time_commutator", "remainder", "forcing_resonant")
    return sum(parts[k] for k in keys)


def reconstruct_resonant(pair: RenormalizedPair, sol: ParacontrolledSolution,
                         cfg: SolverConfig | None = None, return_parts: bool = False):
    """Rebuild ``b o grad u`` of a solution from its ansatz.

    The controller ``grad u`` is taken from ``sol.u``; the solution must
    satisfy the ansatz within ``cfg.consistency_factor * cfg.tol``.
    """
    cfg = cfg or SolverConfig()
    pre = _precompute(pair, sol.lam, cfg.quadrature)
    defect = sol.ansatz_defect(pre.Ib)
    if defect > cfg.consistency_factor * cfg.tol:
        raise ContractError(f"ansatz violated: defect {defect:.3e}")
    g = pair.grid
    ubar = sol.u.values - (0.0 if sol.u0 is None else sol.u0)
    ctrl = grad(g, ubar)
    sharp = ubar - sum(para_lower_mod(g, pair.times, ctrl[:, j], pre.Ib[:, j]) for j in range(g.dim)) - sol.forcing_part
    if sol.u0 is None:
        rbf = pair.rbf(sol.lam)
    else:
        fbar = _shifted_forcing(pair, sol.u0, sol.lam)
        rbf = resonant_drift_forcing(pair.b, pair.f.like(fbar), sol.lam)
    parts = resonant_addends(pair, ctrl, sharp, rbf, pre)
    total = pair.f.like(_sum_addends(parts))
    if sol.u0 is not None:
        # the shift moved b o grad u0 into the forcing; add it back
        total = total + pair.f.like(sum(resonant(g, pair.b.values[:, i], partial(g, np.broadcast_to(sol.u0, ubar.shape), i))
                                        for i in range(g.dim)))
    if return_parts:
        return total, {k: pair.f.like(v) for k, v in parts.items()}
    return total


def transport_product(grid: Grid, b: np.ndarray, gu: np.ndarray, res: np.ndarray) -> np.ndarray:
    """``b <> grad u = b < grad u + b > grad u + res`` summed over components."""
    out = res.copy()
    for i in range(grid.dim):
        out += para_lower(grid, b[:, i], gu[:, i]) + para_lower(grid, gu[:, i], b[:, i])
    return out


# ----------------------------------------------------------------------------
# fixed point
# ----------------------------------------------------------------------------


def _shifted_forcing(pair: RenormalizedPair, u0: np.ndarray, lam: float) -> np.ndarray:
    """``f + Delta u0 - lam u0 + b . grad u0`` for the zero-initial-value problem."""
    g = pair.grid
    gu0 = grad(g, u0)
    bdu = sum(dealiased_product(g, pair.b.values[:, i], np.broadcast_to(gu0[i], pair.f.values.shape))
              for i in range(g.dim))
    return pair.f.values + laplacian(g, u0) - lam * u0 + bdu


def _iterate(pair: RenormalizedPair, lam: float, cfg: SolverConfig, u0: np.ndarray | None,
             extra: ForcingFn | None, weight: Weight | None, stage: str) -> ParacontrolledSolution:
    g = pair.grid
    t = pair.times
    if t.size < 2:
        raise ContractError("need at least two time slices")
    lam = float(lam)
    pre = _precompute(pair, lam, cfg.quadrature)
    zero_u0 = u0 is None or not np.any(u0)
    if zero_u0:
        fbar = pair.f.values
        rbf = pair.rbf(lam)
        u0arr = None
    else:
        u0arr = np.asarray(u0, dtype=float)
        if u0arr.shape != g.shape:
            raise ShapeError("initial value does not live on the grid")
        fbar = _shifted_forcing(pair, u0arr, lam)
        rbf = resonant_drift_forcing(pair.b, pair.f.like(fbar), lam)
    If = duhamel_arrays(g, t, fbar, lam, cfg.quadrature)
    ratio = mollification_resolution(g, float(t[1] - t[0]))
    if ratio > 1.0:
        log.info("time mollifier under-resolved on the finest blocks: dt*2^(2 j_max) = %.3g", ratio)
    rho = 1.0 if weight is None else weight.values
    b = pair.b.values

    def full(ubar):
        return ubar if u0arr is None else ubar + u0arr

    # u^(0): the b = 0 solution (with the nonlinear forcing frozen at it)
    ubar = If.copy()
    if extra is not None:
        u_full = full(ubar)
        ubar = If + duhamel_arrays(g, t, extra(u_full, grad(g, u_full)), lam, cfg.quadrature)
    controller = np.zeros((t.size, g.dim) + g.shape)
    sharp = ubar - If
    changes = []
    res = None
    for it in range(1, cfg.max_iter + 1):
        parts = resonant_addends(pair, controller, sharp, rbf, pre)
        res = _sum_addends(parts)
        gu = grad(g, ubar)
        rhs = transport_product(g, b, gu, res)
        if extra is not None:
            u_full = full(ubar)
            rhs = rhs + extra(u_full, grad(g, u_full))
        new_controller = gu
        para = sum(para_lower_mod(g, t, new_controller[:, j], pre.Ib[:, j]) for j in range(g.dim))
        new_sharp = duhamel_arrays(g, t, rhs, lam, cfg.quadrature) - para
        new_u = para + new_sharp + If
        if not np.all(np.isfinite(new_u)):
            raise IterationFailure(f"{stage}: non-finite iterate", data={"iteration": it, "changes": changes})
        scale = max(1.0, float(np.max(np.abs(rho * new_u))))
        change = float(np.max(np.abs(rho * (new_u - ubar)))) / scale
        changes.append(change)
        ubar, controller, sharp = new_u, new_controller, new_sharp
        if change < cfg.tol:
            break
    else:
        raise IterationFailure(
            f"{stage}: no convergence after {cfg.max_iter} iterations (last change {changes[-1]:.3e})",
            data={"changes": changes, "lambda": lam},
        )
    # resonant product of the returned iterate
    parts = resonant_addends(pair, controller, sharp, rbf, pre)
    res = _sum_addends(parts)
    if u0arr is not None:
        gu0 = grad(g, u0arr)
        res = res + sum(resonant(g, b[:, i], np.broadcast_to(gu0[i], ubar.shape)) for i in range(g.dim))
    u = full(ubar)
    extra_f = None if extra is None else extra(u, grad(g, u))
    residuals = _strong_residuals(pair, u, res, lam, extra_f)
    return ParacontrolledSolution(
        u=pair.f.like(u), u_sharp=pair.f.like(sharp), resonant_bu=pair.f.like(res), lam=lam,
        residuals=residuals, controller=controller, forcing_part=If, iterations=it, changes=changes,
        u0=u0arr, resolution_ratio=ratio,
    )


def _strong_residuals(pair: RenormalizedPair, u: np.ndarray, res: np.ndarray, lam: float,
                      extra_f: np.ndarray | None) -> np.ndarray:
    """Per-step sup of ``L_lam u - b <> grad u - f`` at midpoints (Crank-Nicolson stencil)."""
    g = pair.grid
    Lu = apply_parabolic(pair.f.like(u), lam).values
    rhs = transport_product(g, pair.b.values, grad(g, u), res) + pair.f.values
    if extra_f is not None:
        rhs = rhs + extra_f
    mid = 0.5 * (rhs[1:] + rhs[:-1])
    return np.max(np.abs(Lu - mid).reshape(mid.shape[0], -1), axis=1)


def solve_linear(pair: RenormalizedPair, u0: Field | np.ndarray | None = None, lam: float = 0.0,
                 cfg: SolverConfig | None = None, extra_forcing: ForcingFn | None = None) -> ParacontrolledSolution:
    """Paracontrolled fixed point for ``L_lam u = b <> grad u + f``, ``u(0) = u0``.

    ``extra_forcing(u, grad_u)``, when given, is added to the right-hand side
    and re-evaluated at every iterate (used for Hamilton-Jacobi nonlinearities).

    Raises
    ------
    IterationFailure
        When ``cfg.max_iter`` iterations do not reach ``cfg.tol``.
    """
    cfg = cfg or SolverConfig()
    if not (math.isfinite(lam) and lam >= 0):
        raise ContractError("lambda must be finite and >= 0")
    if not (np.all(np.isfinite(pair.b.values)) and np.all(np.isfinite(pair.f.values))):
        raise ContractError("pair data must be finite")
    u0v = None if u0 is None else (u0.values if isinstance(u0, Field) else np.asarray(u0, dtype=float))
    return _iterate(pair, lam, cfg, u0v, extra_forcing, None, "solve-linear")


def weighted_exponent(alpha: float, kappa: float) -> float:
    """``delta = 2 (9 / (2 - 3 alpha) + 1) kappa`` of the weighted estimate."""
    return 2.0 * (9.0 / (2.0 - 3.0 * alpha) + 1.0) * kappa


def solve_weighted(pair: RenormalizedPair, u0: Field | np.ndarray | None = None,
                   cfg: SolverConfig | None = None, r: float = 0.5,
                   extra_forcing: ForcingFn | None = None, report: bool = True) -> tuple:
    """Fixed point at ``lam = 0`` with convergence measured in ``L^inf(rho_delta)``.

    ``kappa`` is the exponent of the pair's weight and
    ``delta = weighted_exponent(alpha, kappa)``.  Returns the solution and a
    report with the weighted parabolic norm of ``u`` and the localized-norm
    cross-check at the final time.
    """
    cfg = cfg or SolverConfig()
    kappa = pair.weight.delta
    delta = weighted_exponent(pair.alpha, kappa)
    if delta >= 1.0:
        warnings.warn(f"weight exponent delta = {delta:.3g} >= 1; kappa too large for the weighted estimate",
                      RuntimeWarning, stacklevel=2)
    w = Weight(pair.grid, delta)
    u0v = None if u0 is None else (u0.values if isinstance(u0, Field) else np.asarray(u0, dtype=float))
    sol = _iterate(pair, 0.0, cfg, u0v, extra_forcing, w, "solve-weighted")
    rep = {"kappa": kappa, "delta": delta, "iterations": sol.iterations}
    if report:
        a = pair.alpha
        rep["weighted_norm"] = parabolic_norm(sol.u, 2.0 - a, w)
        rep["unweighted_norm"] = parabolic_norm(sol.u, 2.0 - a, None)
        last = Field(pair.grid, sol.u.values[-1])
        if pair.grid.dim == 1:
            rep["localized_norm"] = localized_norm(last, 2.0 - a, w, r)
    return sol, rep


@dataclass(frozen=True)
class DampingScan:
    lambdas: tuple
    iterations: tuple
    sup_norms: tuple
    converged: tuple
    amp: float
    ratios: tuple

    @property
    def iterations_non_increasing(self) -> bool:
        its = [i for i, c in zip(self.iterations, self.converged) if c]
        return all(b <= a for a, b in zip(its, its[1:]))

    @property
    def norms_decreasing(self) -> bool:
        ns = [n for n, c in zip(self.sup_norms, self.converged) if c]
        return all(b <= a * (1 + 1e-12) for a, b in zip(ns, ns[1:]))

    def to_json(self) -> dict:
        return {"lambdas": list(self.lambdas), "iterations": list(self.iterations),
                "sup_norms": list(self.sup_norms), "converged": list(self.converged),
                "amp": self.amp, "ratios": list(self.ratios),
                "iterations_non_increasing": self.iterations_non_increasing,
                "norms_decreasing": self.norms_decreasing}


def damping_scan(pair: RenormalizedPair, u0=None, lambdas: Sequence[float] = (0, 16, 64, 256),
                 cfg: SolverConfig | None = None, amp: float | None = None) -> DampingScan:
    """Solve at each ``lam`` and record iteration counts and ``sup |u_lam|``.

    Failures to converge are recorded as data points.  ``amp`` (the pair's
    ``A^{b,f}``) scales the reported ratios ``sup|u_lam| / amp``; it defaults
    to the value stored on the pair, or 1.
    """
    lambdas = tuple(float(x) for x in lambdas)
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise ContractError("lambda list must be increasing")
    cfg = cfg or SolverConfig()
    if amp is None:
        amp = pair.amp if math.isfinite(pair.amp) else 1.0
    its, sups, conv = [], [], []
    for lam in lambdas:
        try:
            sol = solve_linear(pair, u0, lam, cfg)
            its.append(sol.iterations)
            sups.append(float(np.max(np.abs(sol.u.values))))
            conv.append(True)
        except IterationFailure:
            its.append(cfg.max_iter)
            sups.append(float("nan"))
            conv.append(False)
    ratios = tuple(s / amp for s in sups)
    return DampingScan(lambdas, tuple(its), tuple(sups), tuple(conv), float(amp), ratios)
