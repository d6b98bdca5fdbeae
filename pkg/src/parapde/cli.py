"""Command line front end.

Every subcommand resolves a configuration (defaults, then a JSON file, then
flag overrides), runs, and writes ``manifest.json`` embedding the resolved
configuration next to its CSV and field dumps.

Exit status: 0 when every asserted invariant holds, 1 when one fails, 2 on
configuration errors and 3 on numerical failures (the stage label and the
residual trace are printed on stderr and stored in the manifest).
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .errors import ConfigError, NumericalError, ParapdeError
from .serialization import save_spacetime, write_csv, write_manifest
from .spectral_core import Field, Grid, SpaceTimeField, set_threads

__all__ = ["main", "build_parser", "resolve_config", "RunConfig", "DEFAULTS", "SUBCOMMANDS"]

# grid.L = None means pi for the smooth test problems and n for noise-driven runs
DEFAULTS = {
    "grid": {"N": 256, "L": None, "dim": 1},
    "time": {"T": 0.25, "dt": 1e-3},
    "noise": {"n": 8.0, "seed": 0, "enabled": True, "width": 0.25},
    "weights": {"kappa": 0.0, "delta": 0.0, "eta": 0.0},
    "solver": {"lambda": 0.0, "tol": 1e-8, "max_iter": 200},
    "pair": {"kind": "smooth", "amplitude": 1.0},
    "hjb": {"family": "quadratic", "coef": 1.0, "zeta": 1.5,
            "table": [[0.0, 0.0], [1.0, 1.0], [2.0, 4.0], [4.0, 16.0]]},
    "kpz": {"levels": [8.0, 16.0, 32.0], "seeds": [0], "h0": "stationary", "reference_substeps": 4},
    "mc": {"x0": [0.0, 2.0, 4.0, 8.0], "gamma": 1.0, "alpha": 1.0, "n_paths": 10000, "T": 1.0, "dt": 0.01},
    "zvonkin": {"lambdas": [16.0, 64.0, 256.0, 1024.0]},
    "out": "parapde-out",
    "threads": 1,
}

FLAG_KEYS = {
    "seed": ("noise", "seed"),
    "n": ("noise", "n"),
    "N": ("grid", "N"),
    "L": ("grid", "L"),
    "T": ("time", "T"),
    "dt": ("time", "dt"),
    "lam": ("solver", "lambda"),
    "kappa": ("weights", "kappa"),
    "eta": ("weights", "eta"),
    "out": ("out",),
    "threads": ("threads",),
}

NOISE_DRIVEN = ("zvonkin-audit", "kpz-run", "kpz-compare")


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of one subcommand run."""

    subcommand: str
    data: dict

    def get(self, *path):
        d = self.data
        for p in path:
            d = d[p]
        return d

    def grid(self) -> Grid:
        g = self.data["grid"]
        return Grid(int(g["dim"]), int(g["N"]), float(g["L"]))

    def times(self) -> np.ndarray:
        T, dt = float(self.data["time"]["T"]), float(self.data["time"]["dt"])
        return np.linspace(0.0, T, int(round(T / dt)) + 1)

    @property
    def out(self) -> Path:
        return Path(self.data["out"])

    def to_json(self) -> dict:
        return {"subcommand": self.subcommand, **self.data}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown configuration key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"configuration key {path + k!r} must be an object")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def _number(cfg: dict, *path, positive: bool = False, nonneg: bool = False) -> float:
    d = cfg
    for p in path:
        d = d[p]
    if isinstance(d, bool) or not isinstance(d, (int, float)) or not math.isfinite(d):
        raise ConfigError(f"{'.'.join(path)} must be a finite number")
    if positive and not d > 0:
        raise ConfigError(f"{'.'.join(path)} must be positive")
    if nonneg and not d >= 0:
        raise ConfigError(f"{'.'.join(path)} must be non-negative")
    return float(d)


def _validate(sub: str, cfg: dict) -> None:
    g = cfg["grid"]
    N = g["N"]
    if isinstance(N, bool) or not isinstance(N, int) or N < 16 or N & (N - 1):
        raise ConfigError("grid.N must be a power of two >= 16")
    if g["dim"] not in (1, 2):
        raise ConfigError("grid.dim must be 1 or 2")
    _number(cfg, "grid", "L", positive=True)
    T = _number(cfg, "time", "T", positive=True)
    dt = _number(cfg, "time", "dt", positive=True)
    if dt > T or abs(round(T / dt) * dt - T) > 1e-9 * T:
        raise ConfigError("time.T must be a positive multiple of time.dt")
    _number(cfg, "noise", "n", positive=True)
    _number(cfg, "noise", "width", positive=True)
    if not isinstance(cfg["noise"]["seed"], int) or cfg["noise"]["seed"] < 0:
        raise ConfigError("noise.seed must be a non-negative integer")
    for k in ("kappa", "delta", "eta"):
        _number(cfg, "weights", k, nonneg=True)
    _number(cfg, "solver", "lambda", nonneg=True)
    _number(cfg, "solver", "tol", positive=True)
    if not isinstance(cfg["solver"]["max_iter"], int) or cfg["solver"]["max_iter"] < 1:
        raise ConfigError("solver.max_iter must be a positive integer")
    if cfg["pair"]["kind"] not in ("smooth", "kpz"):
        raise ConfigError("pair.kind must be 'smooth' or 'kpz'")
    _number(cfg, "pair", "amplitude", nonneg=True)
    h = cfg["hjb"]
    if h["family"] not in ("quadratic", "power", "table", "zero"):
        raise ConfigError("hjb.family must be quadratic, power, table or zero")
    if h["family"] == "power" and not 0.0 <= _number(cfg, "hjb", "zeta") < 2.0:
        raise ConfigError("hjb.zeta must lie in [0, 2)")
    if h["family"] == "table":
        tab = np.asarray(h["table"], dtype=float)
        if tab.ndim != 2 or tab.shape[1] != 2 or tab.shape[0] < 2 or np.any(np.diff(tab[:, 0]) <= 0):
            raise ConfigError("hjb.table must list [|Q|, H] pairs with increasing |Q|")
    if sub in ("norms", "mc-feynmankac", "kpz-run", "kpz-compare", "zvonkin-audit") and g["dim"] != 1:
        raise ConfigError(f"{sub} runs on one-dimensional grids")
    if sub == "solve-linear" and cfg["pair"]["kind"] == "kpz" and g["dim"] != 1:
        raise ConfigError("the KPZ pair lives on one-dimensional grids")
    if cfg["kpz"]["h0"] not in ("stationary", "flat", "sine"):
        raise ConfigError("kpz.h0 must be stationary, flat or sine")
    if not cfg["kpz"]["levels"] or not cfg["kpz"]["seeds"]:
        raise ConfigError("kpz.levels and kpz.seeds must be non-empty")
    m = cfg["mc"]
    if not isinstance(m["n_paths"], int) or m["n_paths"] < 2:
        raise ConfigError("mc.n_paths must be an integer >= 2")
    if not 0.0 <= _number(cfg, "mc", "alpha") < 2.0:
        raise ConfigError("mc.alpha must lie in [0, 2)")
    _number(cfg, "mc", "gamma", positive=True)
    _number(cfg, "mc", "T", positive=True)
    _number(cfg, "mc", "dt", positive=True)
    if not cfg["zvonkin"]["lambdas"]:
        raise ConfigError("zvonkin.lambdas must be non-empty")
    if isinstance(cfg["threads"], bool) or not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")


def resolve_config(subcommand: str, config_path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file, then flag overrides; validated.

    ``PARAPDE_THREADS`` supplies the thread count when neither the file nor
    a flag does.
    """
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    overrides = dict(overrides or {})
    cfg = copy.deepcopy(DEFAULTS)
    loaded: dict = {}
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("configuration must be a JSON object")
        cfg = _merge(cfg, loaded)
    env = os.environ.get("PARAPDE_THREADS")
    if "threads" not in overrides and "threads" not in loaded and env:
        try:
            cfg["threads"] = int(env)
        except ValueError as exc:
            raise ConfigError("PARAPDE_THREADS must be an integer") from exc
    for key, value in overrides.items():
        path = FLAG_KEYS[key]
        d = cfg
        for p in path[:-1]:
            d = d[p]
        d[path[-1]] = value
    if cfg["grid"]["L"] is None:
        cfg["grid"]["L"] = float(cfg["noise"]["n"]) if subcommand in NOISE_DRIVEN else math.pi
    _validate(subcommand, cfg)
    return RunConfig(subcommand, cfg)


# ----------------------------------------------------------------------------
# shared builders
# ----------------------------------------------------------------------------


def _check(results: list, name: str, value: float, bound: float) -> None:
    results.append({"name": name, "value": float(value), "bound": float(bound), "pass": bool(value <= bound)})


def _smooth_pair(rc: RunConfig):
    """Smooth time-dependent drift and forcing on the configured grid."""
    from .enhancement import make_pair
    from .weighted_spaces import Weight

    g = rc.grid()
    times = rc.times()
    s = np.pi / g.L
    x = g.coords[0]
    amp = float(rc.get("pair", "amplitude"))
    if g.dim == 1:
        b = np.stack([[np.cos(s * x) + 0.7 * np.sin(2 * s * x + t)] for t in times])
    else:
        y = g.coords[1]
        b = np.stack([[np.cos(s * y) + 0.5 * np.sin(s * x + t), np.sin(s * x) * np.cos(s * y)] for t in times])
    f = np.stack([np.sin(s * x) * np.cos(t) + 0.3 * np.cos(3 * s * x) for t in times])
    return make_pair(SpaceTimeField(g, times, amp * b), SpaceTimeField(g, times, f), 0.6,
                     Weight(g, float(rc.get("weights", "kappa"))))


def _kpz_pair(rc: RunConfig):
    from .enhancement import assemble_kpz_pair, brownian_bridge_initial, build_trees, sample_noise

    g = rc.grid()
    times = rc.times()
    n = float(rc.get("noise", "n"))
    seed = int(rc.get("noise", "seed"))
    width = float(rc.get("noise", "width"))
    xi = sample_noise(n, seed, g, times, width)
    if not rc.get("noise", "enabled"):
        xi = xi.like(np.zeros_like(xi.values))
    enh = build_trees(xi, brownian_bridge_initial(n, seed, g, width), n, seed, width,
                      noise_rule="piecewise-constant")
    return enh, assemble_kpz_pair(enh)


def _solver_config(rc: RunConfig):
    from .linear_para_solver import SolverConfig

    return SolverConfig(tol=float(rc.get("solver", "tol")), max_iter=int(rc.get("solver", "max_iter")))


def _hamiltonian(rc: RunConfig):
    from .hjb_solver import Hamiltonian

    h = rc.data["hjb"]
    if h["family"] == "quadratic":
        return Hamiltonian.quadratic(float(h["coef"]))
    if h["family"] == "power":
        return Hamiltonian.power(float(h["zeta"]), float(h["coef"]))
    if h["family"] == "table":
        tab = np.asarray(h["table"], dtype=float)
        coef = float(h["coef"])

        def func(t, coords, v, Q):
            return coef * np.interp(np.sqrt(np.sum(Q * Q, axis=0)), tab[:, 0], tab[:, 1])

        return Hamiltonian.general(func)
    return Hamiltonian.zero()


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------


def cmd_verify_core(rc: RunConfig) -> dict:
    """Spectral, paraproduct and heat invariants on random band-limited data."""
    from .heat_ops import duhamel_arrays, duhamel_window, heat_arrays, windowed_family
    from .paracalc import LocalizationPlan, bony_parts, localize_arrays
    from .spectral_core import dealiased_product, fft, get_partition, ifft

    g = rc.grid()
    rng = np.random.default_rng(int(rc.get("noise", "seed")))
    res: list = []
    damp = np.exp(-(g.kabs_r / (0.15 * g.nyquist)) ** 2)
    worst = 0.0
    for _ in range(10):
        a, b = (ifft(g, damp * fft(g, rng.standard_normal(g.shape))) for _ in range(2))
        parts = bony_parts(g, a, b)
        prod = dealiased_product(g, a, b)
        err = float(np.max(np.abs(parts["lower"] + parts["resonant"] + parts["upper"] - prod)))
        worst = max(worst, err / max(float(np.max(np.abs(prod))), 1e-300))
    _check(res, "bony_identity", worst, 1e-10)
    part = get_partition(g)
    _check(res, "partition_of_unity", float(np.max(np.abs(part.multipliers.sum(axis=0) - 1.0))), 1e-13)
    x = g.coords[0]
    k = 3 * np.pi / g.L
    mode = np.cos(k * x)
    _check(res, "heat_eigenmode", float(np.max(np.abs(heat_arrays(g, mode, 0.1) - math.exp(-k * k * 0.1) * mode))),
           1e-13)
    f0 = ifft(g, damp * fft(g, rng.standard_normal(g.shape)))
    sg = float(np.max(np.abs(heat_arrays(g, heat_arrays(g, f0, 0.03), 0.05) - heat_arrays(g, f0, 0.08))))
    _check(res, "heat_semigroup", sg, 1e-11)
    times = np.linspace(0.0, 0.1, 21)
    forcing = np.stack([np.sin(np.pi / g.L * x + t) + np.cos(t) * f0 for t in times])
    ff = SpaceTimeField(g, times, forcing)
    full = duhamel_arrays(g, times, forcing)[-1]
    wd = max(float(np.max(np.abs(full - duhamel_window(ff, 0.0, 0.1).values))),
             float(np.max(np.abs(full - windowed_family(ff, 0.1).values[0]))))
    _check(res, "duhamel_windows", wd, 1e-12)
    hi, lo = localize_arrays(LocalizationPlan(g, times, L=2.0), forcing)
    _check(res, "localization_cover", float(np.max(np.abs(hi + lo - forcing))), 1e-12)
    return {"invariants": res, "pass": all(r["pass"] for r in res)}


def cmd_norms(rc: RunConfig) -> dict:
    """Weighted norms and the block profile of one noise slice."""
    from .enhancement import sample_noise
    from .weighted_spaces import NormSpec, Weight, block_sup_profile, norm_report

    g = rc.grid()
    xi = sample_noise(float(rc.get("noise", "n")), int(rc.get("noise", "seed")), g, rc.times(),
                      float(rc.get("noise", "width")))
    f = Field(g, xi.values[0])
    w = Weight(g, float(rc.get("weights", "kappa")))
    specs = [NormSpec(-0.6, math.inf, math.inf, w), NormSpec(-0.6, 2.0, math.inf, w),
             NormSpec(-1.0, math.inf, math.inf, w, "holder_zygmund")]
    reports = [norm_report(f, s) for s in specs]
    prof = block_sup_profile(f, w)
    write_csv(rc.out / "block_profile.csv", ["j", "weighted_sup"], [(j - 1, v) for j, v in enumerate(prof)])
    ok = all(math.isfinite(r["value"]) and r["value"] >= 0 for r in reports)
    return {"norms": reports, "pass": ok}


def cmd_solve_linear(rc: RunConfig) -> dict:
    """Paracontrolled solve of the linear problem; checks the resonant reconstruction."""
    from .linear_para_solver import reconstruct_resonant, solve_linear

    if rc.get("pair", "kind") == "kpz":
        _, pair = _kpz_pair(rc)
    else:
        pair = _smooth_pair(rc)
    scfg = _solver_config(rc)
    sol = solve_linear(pair, None, float(rc.get("solver", "lambda")), scfg)
    rb = reconstruct_resonant(pair, sol, scfg)
    save_spacetime(rc.out / "u", sol.u)
    save_spacetime(rc.out / "u_sharp", sol.u_sharp)
    t = pair.times
    write_csv(rc.out / "residuals.csv", ["t", "residual"], zip(0.5 * (t[1:] + t[:-1]), sol.residuals))
    write_csv(rc.out / "changes.csv", ["iteration", "change"], enumerate(sol.changes, 1))
    return {"solution": sol.manifest(scfg.tol), "resonant_sup": float(np.max(np.abs(rb.values))),
            "pass": bool(np.all(np.isfinite(sol.u.values)))}


def cmd_solve_hjb(rc: RunConfig) -> dict:
    """Classical HJB solve; quadratic runs are checked against Cole-Hopf."""
    from .hjb_solver import HJBProblem, max_principle_ratio, solve_hjb_classical
    from .spectral_core import fft, ifft

    g = rc.grid()
    times = rc.times()
    s = np.pi / g.L
    v0 = np.sin(s * g.coords[0]) + 0.5 * np.cos(2 * s * g.coords[-1])
    H = _hamiltonian(rc)
    res = solve_hjb_classical(HJBProblem(g, times, v0, H))
    save_spacetime(rc.out / "v", res.v)
    write_csv(rc.out / "residuals.csv", ["step", "residual"], enumerate(res.residuals))
    out = {"hamiltonian": H.to_json() if H.family != "general" else {"family": "table"},
           "run": res.manifest(), "max_principle_ratio": max_principle_ratio(res.v, v0)}
    ok = bool(np.all(np.isfinite(res.v.values)))
    if H.family == "quadratic":
        c = H.coef
        ref = np.log(ifft(g, np.exp(-g.k2_r * times[-1]) * fft(g, np.exp(c * v0)))) / c
        err = float(np.max(np.abs(res.v.values[-1] - ref)) / np.max(np.abs(ref)))
        out["cole_hopf_error"] = err
        ok = ok and err <= 1e-4
    out["pass"] = ok
    return out


def cmd_zvonkin_audit(rc: RunConfig) -> dict:
    """Scan lambda for the Zvonkin threshold and audit the transformed coefficients."""
    from .hjb_solver import build_zvonkin, get_default_level, transform_coefficients
    from .linear_para_solver import solve_linear
    from .paracalc import LocalizationPlan

    _, pair = _kpz_pair(rc)
    g = rc.grid()
    plan = LocalizationPlan(g, pair.times, L=float(get_default_level(g)))
    scfg = _solver_config(rc)
    scan, chosen = [], None
    for lam in rc.data["zvonkin"]["lambdas"]:
        zmap = build_zvonkin(pair, plan, float(lam), scfg)
        scan.append(zmap.to_json())
        if zmap.below_threshold:
            chosen = zmap
            break
    write_csv(rc.out / "lambda_scan.csv", ["lambda", "grad_sup", "bilip_lo", "bilip_hi"],
              [(r["lambda"], r["grad_sup"], *r["bilipschitz"]) for r in scan])
    out: dict = {"scan": scan, "plan": plan.to_json()}
    if chosen is None:
        out["pass"] = False
        return out
    u1 = solve_linear(pair, None, 0.0, scfg).u
    _, rep = transform_coefficients(chosen, pair, u1, _hamiltonian(rc))
    save_spacetime(rc.out / "zvonkin_u", chosen.u_vec)
    lo, hi = chosen.bilipschitz
    out.update({"threshold_lambda": chosen.lam, "transform": rep})
    out["pass"] = bool(chosen.grad_sup <= 0.5 and 0.5 <= lo and hi <= 1.5
                       and 0.4 <= rep["ellipticity_min"] and rep["ellipticity_max"] <= 2.2)
    return out


def _kpz_config(rc: RunConfig):
    from .kpz_pipeline import KPZConfig

    L = float(rc.get("grid", "L"))
    return KPZConfig(N=int(rc.get("grid", "N")), T=float(rc.get("time", "T")), dt=float(rc.get("time", "dt")),
                     L=None if L == float(rc.get("noise", "n")) else L,
                     width=float(rc.get("noise", "width")), h0=rc.data["kpz"]["h0"],
                     eta=float(rc.get("weights", "eta")), noise=bool(rc.get("noise", "enabled")),
                     tol=float(rc.get("solver", "tol")), max_iter=int(rc.get("solver", "max_iter")),
                     reference_substeps=int(rc.data["kpz"]["reference_substeps"]))


def cmd_kpz_run(rc: RunConfig) -> dict:
    """One KPZ run with its Cole-Hopf reference."""
    from .kpz_pipeline import run_kpz, save_run

    run = run_kpz(float(rc.get("noise", "n")), int(rc.get("noise", "seed")), _kpz_config(rc))
    save_run(run, rc.out / "run")
    gap = run.assembly_gap()
    ok = gap <= 1e-10 and math.isfinite(run.error)
    return {"run": run.manifest(), "assembly_gap": gap, "pass": ok}


def cmd_kpz_compare(rc: RunConfig) -> dict:
    """Matched-seed discrepancy trend over mollification levels."""
    from .kpz_pipeline import compare_levels

    cfg = _kpz_config(rc)
    levels = [float(n) for n in rc.data["kpz"]["levels"]]
    rows, reports = [], []
    for seed in rc.data["kpz"]["seeds"]:
        rep = compare_levels(int(seed), levels, cfg)
        reports.append(rep)
        rows.extend((int(seed), n, e, c) for n, e, c in zip(rep["levels"], rep["errors"], rep["drifts"]))
    write_csv(rc.out / "error_curves.csv", ["seed", "n", "discrepancy", "drift"], rows)
    n_dec = sum(r["strictly_decreasing"] for r in reports)
    return {"comparisons": reports, "strictly_decreasing": n_dec, "n_seeds": len(reports),
            "pass": n_dec >= math.ceil(0.9 * len(reports))}


def cmd_mc_expmoment(rc: RunConfig) -> dict:
    """Exponential-moment envelope of Brownian motion."""
    from .mc_probe import envelope_slope, exp_moment_sweep

    m = rc.data["mc"]
    rows = exp_moment_sweep(m["x0"], float(m["gamma"]), float(m["alpha"]), float(m["T"]), float(m["dt"]),
                            int(m["n_paths"]), int(rc.get("noise", "seed")))
    write_csv(rc.out / "expmoment.csv", ["x0", "estimate", "ci_lo", "ci_hi"], rows)
    slope = envelope_slope(rows, float(m["alpha"]))
    return {"rows": [list(r) for r in rows], "slope": slope, "bound": 1.1 * float(m["gamma"]),
            "pass": slope <= 1.1 * float(m["gamma"])}


def cmd_mc_feynmankac(rc: RunConfig) -> dict:
    """Monte Carlo cross-check of the heat solution at a few points."""
    from .hjb_solver import HJBProblem, solve_hjb_classical
    from .mc_probe import feynman_kac_check

    g = rc.grid()
    times = rc.times()
    v0 = np.sin(np.pi / g.L * g.coords[0])
    res = solve_hjb_classical(HJBProblem(g, times, v0))
    T = float(times[-1])
    pts = [(T, 0.5), (T, -1.0), (float(times[len(times) // 2]), 1.5)]
    rep = feynman_kac_check(res.v, v0, pts, int(rc.data["mc"]["n_paths"]), dt=float(rc.get("time", "dt")),
                            seed=int(rc.get("noise", "seed")))
    write_csv(rc.out / "feynman_kac.csv", ["t", "x", "estimate", "pde", "std_error", "z"],
              [(p[0], p[1], e, v, s, z) for p, e, v, s, z in
               zip(rep.points, rep.estimates, rep.pde, rep.std_errors, rep.zscores)])
    return {"report": rep.to_json(), "pass": rep.max_abs_z <= 4.0}


SUBCOMMANDS: dict[str, Callable[[RunConfig], dict]] = {
    "verify-core": cmd_verify_core,
    "norms": cmd_norms,
    "solve-linear": cmd_solve_linear,
    "solve-hjb": cmd_solve_hjb,
    "zvonkin-audit": cmd_zvonkin_audit,
    "kpz-run": cmd_kpz_run,
    "kpz-compare": cmd_kpz_compare,
    "mc-expmoment": cmd_mc_expmoment,
    "mc-feynmankac": cmd_mc_feynmankac,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parapde", description="Paracontrolled PDE solvers and diagnostics")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name, fn in SUBCOMMANDS.items():
        s = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0])
        s.add_argument("--config", help="JSON configuration file")
        s.add_argument("--seed", type=int)
        s.add_argument("--n", type=float, help="noise mollification level")
        s.add_argument("--N", type=int, help="grid points per axis")
        s.add_argument("--L", type=float, help="half period of the torus")
        s.add_argument("--T", type=float, help="time horizon")
        s.add_argument("--dt", type=float, help="time step")
        s.add_argument("--lambda", dest="lam", type=float, help="damping parameter")
        s.add_argument("--kappa", type=float, help="weight exponent of the solver norms")
        s.add_argument("--eta", type=float, help="weight exponent of the comparison norm")
        s.add_argument("--out", help="output directory")
        s.add_argument("--threads", type=int, help="FFT worker threads (fallback: PARAPDE_THREADS)")
    return p


def _fail(rc: RunConfig, manifest: dict, status: dict, code: int) -> int:
    manifest.update(status)
    write_manifest(rc.out / "manifest.json", manifest)
    return code


def main(argv: list | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k in FLAG_KEYS and v is not None}
    try:
        rc = resolve_config(args.subcommand, args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    set_threads(int(rc.data["threads"]))
    rc.out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, "config": rc.to_json()}
    try:
        result = SUBCOMMANDS[args.subcommand](rc)
    except NumericalError as exc:
        print(f"numerical failure [{exc.stage}]: {exc}", file=sys.stderr)
        trace = exc.data.get("changes")
        if trace:
            print("residual trace: " + " ".join(f"{c:.3e}" for c in trace), file=sys.stderr)
        return _fail(rc, manifest, {"status": "numerical-failure", "stage": exc.stage, "error": str(exc),
                                    "data": exc.data}, 3)
    except ParapdeError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return _fail(rc, manifest, {"status": "config-error", "error": str(exc)}, 2)
    ok = bool(result.pop("pass"))
    manifest.update({"status": "ok" if ok else "invariant-failure", "pass": ok, "result": result})
    write_manifest(rc.out / "manifest.json", manifest)
    print(f"{args.subcommand}: {'pass' if ok else 'FAIL'}")
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
