"""Acceptance suite: one test per criterion, each printing a single pass/fail line.

Run with ``pytest -s tests/test_acceptance.py`` to see the lines.  The two
Monte Carlo sweeps over noise realizations are marked ``slow``.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import lacunary_field, power_law_field, report
from parapde.cli import SUBCOMMANDS, main
from parapde.enhancement import (
    assemble_kpz_pair,
    brownian_bridge_initial,
    build_trees,
    make_pair,
    renormalization_oracle,
    sample_noise,
)
from parapde.heat_ops import heat_arrays, schauder_probe
from parapde.hjb_solver import (
    HJBProblem,
    Hamiltonian,
    build_zvonkin,
    get_default_level,
    solve_hjb_classical,
    transform_coefficients,
)
from parapde.kpz_pipeline import KPZConfig, compare_levels
from parapde.linear_para_solver import SolverConfig, reconstruct_resonant, solve_linear
from parapde.mc_probe import envelope_slope, exp_moment_sweep
from parapde.paracalc import LocalizationPlan, bony_parts, commutator_arrays, localize_arrays, para_lower, resonant
from parapde.spectral_core import Field, Grid, SpaceTimeField, dealiased_product, fft, get_partition, ifft, partial
from parapde.weighted_spaces import Weight, besov_norm_values, block_sup_profile


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def smooth_random(grid, rng):
    """Band-limited random field, Gaussian-damped at a fifth of the Nyquist number."""
    damp = np.exp(-(grid.kabs_r / (0.2 * grid.nyquist)) ** 2)
    return ifft(grid, damp * fft(grid, rng.standard_normal(grid.shape)))


def test_bony_identity():
    worst = 0.0
    with Clock() as c:
        for N in (256, 1024):
            g = Grid(1, N, math.pi)
            rng = np.random.default_rng(N)
            for _ in range(100):
                a, b = smooth_random(g, rng), smooth_random(g, rng)
                parts = bony_parts(g, a, b)
                prod = dealiased_product(g, a, b)
                err = np.max(np.abs(parts["lower"] + parts["resonant"] + parts["upper"] - prod))
                worst = max(worst, err / np.max(np.abs(prod)))
    ok = worst <= 1e-10 and c.elapsed < 10
    report("bony identity", ok, f"max relative error {worst:.2e} (<= 1e-10), {c.elapsed:.1f} s")
    assert ok


def test_heat_exactness_and_semigroup():
    with Clock() as c:
        g = Grid(1, 512, math.pi)
        mode = np.cos(7 * g.x)
        eig = np.max(np.abs(heat_arrays(g, mode, 0.05) - math.exp(-49 * 0.05) * mode))
        f = smooth_random(g, np.random.default_rng(0))
        semi = np.max(np.abs(heat_arrays(g, heat_arrays(g, f, 0.013), 0.021) - heat_arrays(g, f, 0.034)))
    ok = eig <= 1e-13 and semi <= 1e-11 and c.elapsed < 1
    report("heat exactness", ok, f"eigenmode {eig:.1e} (<= 1e-13), semigroup {semi:.1e} (<= 1e-11), {c.elapsed:.2f} s")
    assert ok


def test_schauder_lambda_scaling():
    # time-constant mollified spatial white noise; seeds averaged
    g = Grid(1, 256, math.pi)
    t = np.linspace(0, 0.25, 126)
    dt = t[1] - t[0]
    lambdas = [2.0**i for i in range(9)]
    slopes = {1.0: [], 1.5: []}
    with Clock() as c:
        for seed in range(5):
            xi = sample_noise(32, seed, g, t, width=0.5)
            f = SpaceTimeField.constant_in_time(Field(g, xi.values[0] * math.sqrt(dt)), t)
            for theta in slopes:
                slopes[theta].append(schauder_probe(f, theta, 0.6, math.inf, lambdas).slope)
    ok = c.elapsed < 60
    parts = []
    for theta, s in slopes.items():
        target = -(1 - theta / 2)
        mean = float(np.mean(s))
        ok = ok and abs(mean - target) <= 0.15
        parts.append(f"theta={theta}: {mean:.3f} vs {target:.2f} (per seed {', '.join(f'{x:.2f}' for x in s)})")
    report("schauder scaling", ok, "; ".join(parts) + f", {c.elapsed:.1f} s")
    assert ok


def test_commutator_smoothing():
    g = Grid(1, 2048, math.pi)
    jm = get_partition(g).j_max
    js = np.arange(1, jm)
    logs_res, logs_com = [], []
    with Clock() as c:
        for d in range(50):
            rng = np.random.default_rng(d)
            f = power_law_field(g, rng, 0.6)
            gg = power_law_field(g, rng, -0.2)
            h = power_law_field(g, rng, -0.2)
            res = resonant(g, para_lower(g, f, gg), h)
            com = commutator_arrays(g, f, gg, h)
            logs_res.append(np.log2(block_sup_profile(Field(g, res))[js + 1]))
            logs_com.append(np.log2(block_sup_profile(Field(g, com))[js + 1]))
    s_res = np.polyfit(js, np.mean(logs_res, axis=0), 1)[0]
    s_com = np.polyfit(js, np.mean(logs_com, axis=0), 1)[0]
    gain = s_res - s_com
    ok = gain >= 0.5 * 0.6 and c.elapsed < 60
    report("commutator smoothing", ok, f"slope gain {gain:.3f} (>= 0.30), {c.elapsed:.1f} s")
    assert ok


def test_localization_scaling():
    g = Grid(1, 2048, math.pi)
    t = np.linspace(0, 0.25, 11)
    alpha = 0.5
    a = np.broadcast_to(lacunary_field(g, alpha, seed=0), (t.size, g.N)).copy()
    levels = np.arange(0, get_partition(g).j_max - 1)
    w = Weight(g, 0.0)
    ok, parts = True, []
    with Clock() as c:
        for dp in (0.25, 0.5):
            norms = []
            for L in levels:
                rough, _ = localize_arrays(LocalizationPlan(g, t, float(L)), a)
                norms.append(np.max(besov_norm_values(g, rough, alpha - dp, math.inf, math.inf, w)))
            slope = np.polyfit(levels, np.log2(norms), 1)[0]
            rel = abs(slope + dp) / dp
            ok = ok and rel <= 0.3
            parts.append(f"delta'={dp}: slope {slope:.3f} (rel. error {rel:.2f})")
    ok = ok and c.elapsed < 60
    report("localization scaling", ok, "; ".join(parts) + f", {c.elapsed:.1f} s")
    assert ok


def _linear_setup(grid, times):
    x = grid.x
    b_of = lambda t: np.cos(x) + 0.5 * np.sin(2 * x) * np.cos(3 * t)  # noqa: E731
    f_of = lambda t: np.sin(x) * (1 + t) + 0.3 * np.cos(3 * x)  # noqa: E731
    pair = make_pair(SpaceTimeField(grid, times, np.stack([b_of(s) for s in times])),
                     SpaceTimeField(grid, times, np.stack([f_of(s) for s in times])))
    return pair, b_of, f_of


def test_linear_solver_against_classical():
    g = Grid(1, 256, math.pi)
    t = np.linspace(0, 0.25, 251)
    k = g.k_full[0]
    u0 = np.cos(2 * g.x)
    lam = 1.0
    cfg = SolverConfig(tol=1e-12)
    with Clock() as c:
        pair, b_of, f_of = _linear_setup(g, t)
        sol = solve_linear(pair, u0, lam, cfg)

        def rhs(s, u):
            uh = np.fft.fft(u)
            return np.real(np.fft.ifft(-k * k * uh)) - lam * u + b_of(s) * np.real(np.fft.ifft(1j * k * uh)) + f_of(s)

        ref = solve_ivp(rhs, (0, 0.25), u0, method="DOP853", rtol=1e-11, atol=1e-12, t_eval=[0.25]).y[:, -1]
        disc = np.max(np.abs(sol.u.values[-1] - ref)) / np.max(np.abs(ref))
        # superposition: (f1, u0) + (f2, 0) = (f1 + f2, u0)
        f2 = pair.f.like(np.cos(5 * g.x)[None] * np.exp(-t)[:, None])
        u_a = solve_linear(pair, u0, lam, cfg).u.values
        u_b = solve_linear(pair.with_forcing(f2), None, lam, cfg).u.values
        u_ab = solve_linear(pair.with_forcing(pair.f + f2), u0, lam, cfg).u.values
        lin = np.max(np.abs(u_ab - u_a - u_b)) / np.max(np.abs(u_ab))
    ok = disc <= 1e-4 and lin <= 1e-8 and c.elapsed < 120
    report("linear solver", ok, f"vs classical {disc:.2e} (<= 1e-4), superposition {lin:.2e} (<= 1e-8), {c.elapsed:.1f} s")
    assert ok


def test_resonant_reconstruction():
    g = Grid(1, 256, math.pi)
    t = np.linspace(0, 0.25, 251)
    cfg = SolverConfig(tol=1e-12)
    worst = 0.0
    with Clock() as c:
        pair, _, _ = _linear_setup(g, t)
        for lam, u0 in ((0.0, None), (4.0, np.cos(2 * g.x))):
            sol = solve_linear(pair, u0, lam, cfg)
            got = reconstruct_resonant(pair, sol, cfg).values
            direct = resonant(g, pair.b.values[:, 0], partial(g, sol.u.values, 0))
            worst = max(worst, np.max(np.abs(got - direct)) / np.max(np.abs(direct)))
    ok = worst <= 1e-6 and c.elapsed < 60
    report("resonant reconstruction", ok, f"max relative gap {worst:.2e} (<= 1e-6), {c.elapsed:.1f} s")
    assert ok


def test_zvonkin_diagnostics():
    n, seed = 8.0, 0
    g = Grid(1, 256, n)
    t = np.linspace(0, 0.25, 251)
    cfg = SolverConfig()
    with Clock() as c:
        enh = build_trees(sample_noise(n, seed, g, t), brownian_bridge_initial(n, seed, g), n, seed,
                          noise_rule="piecewise-constant")
        pair = assemble_kpz_pair(enh)
        plan = LocalizationPlan(g, t, float(get_default_level(g)))
        chosen = None
        for lam in (16.0, 64.0, 256.0, 1024.0):
            z = build_zvonkin(pair, plan, lam, cfg)
            if z.below_threshold:
                chosen = z
                break
        assert chosen is not None, "no lambda reached the gradient threshold"
        u1 = solve_linear(pair, None, 0.0, cfg).u
        _, rep = transform_coefficients(chosen, pair, u1, Hamiltonian.quadratic())
    lo, hi = chosen.bilipschitz
    ok = (chosen.grad_sup <= 0.5 and 0.5 <= lo and hi <= 1.5
          and 0.4 <= rep["ellipticity_min"] and rep["ellipticity_max"] <= 2.2 and c.elapsed < 120)
    report("zvonkin diagnostics", ok,
           f"lambda {chosen.lam:g}: grad_sup {chosen.grad_sup:.3f} (<= 0.5), bi-Lipschitz [{lo:.3f}, {hi:.3f}] "
           f"in [0.5, 1.5], ellipticity [{rep['ellipticity_min']:.3f}, {rep['ellipticity_max']:.3f}] in [0.4, 2.2], "
           f"{c.elapsed:.1f} s")
    assert ok


def test_hjb_cole_hopf():
    g = Grid(1, 512, math.pi)
    t = np.linspace(0, 0.25, 251)
    v0 = np.sin(g.x) + 0.5 * np.cos(2 * g.x)
    with Clock() as c:
        v = solve_hjb_classical(HJBProblem(g, t, v0, Hamiltonian.quadratic())).v.values[-1]
        ref = np.log(heat_arrays(g, np.exp(v0), 0.25))
    err = np.max(np.abs(v - ref)) / np.max(np.abs(ref))
    ok = err <= 1e-4 and c.elapsed < 30
    report("hjb cole-hopf", ok, f"relative error {err:.2e} (<= 1e-4), {c.elapsed:.1f} s")
    assert ok


@pytest.mark.slow
def test_renormalization_constant():
    draws = 200
    t = np.linspace(0, 0.25, 251)
    ok, parts = True, []
    with Clock() as c:
        for n in (8, 16, 32):
            g = Grid(1, 512, float(n))
            c1 = np.array([build_trees(sample_noise(n, s, g, t), brownian_bridge_initial(n, s, g), n=n, seed=s).c1
                           for s in range(draws)])
            oracle = renormalization_oracle(g, n)
            z = (c1.mean() - oracle) / (c1.std(ddof=1) / math.sqrt(draws))
            ok = ok and abs(z) <= 3
            parts.append(f"n={n}: {c1.mean():.4f} vs {oracle:.4f} (z={z:+.2f})")
    ok = ok and c.elapsed < 300
    report("renormalization constant", ok, "; ".join(parts) + f", {c.elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_kpz_colehopf_trend():
    cfg = KPZConfig(N=512, T=0.25, dt=1e-3)
    reps = []
    with Clock() as c:
        for seed in range(20):
            reps.append(compare_levels(seed, (8, 16, 32), cfg))
    n_dec = sum(r["strictly_decreasing"] for r in reps)
    med = np.median([r["errors"] for r in reps], axis=0)
    ok = n_dec >= 18 and c.elapsed < 1200
    report("kpz vs cole-hopf trend", ok,
           f"strictly decreasing for {n_dec}/20 seeds (>= 18); median discrepancy "
           f"{', '.join(f'n={n}: {e:.2e}' for n, e in zip((8, 16, 32), med))}, {c.elapsed:.0f} s")
    assert ok


def test_exponential_moment_envelope():
    gamma, alpha = 1.0, 1.0
    with Clock() as c:
        rows = exp_moment_sweep([0.0, 2.0, 4.0, 8.0], gamma, alpha, T=1.0, dt=0.01, n_paths=10_000)
        slope = envelope_slope(rows, alpha)
    ok = slope <= 1.1 * gamma and c.elapsed < 60
    report("exponential moment envelope", ok, f"slope {slope:.3f} (<= {1.1 * gamma:.2f}), {c.elapsed:.1f} s")
    assert ok


REPRO_ARGS = {
    "verify-core": ["--N", "64"],
    "norms": ["--N", "64"],
    "solve-linear": ["--N", "64", "--T", "0.05", "--dt", "0.005"],
    "solve-hjb": ["--N", "64", "--T", "0.05", "--dt", "0.005"],
    "zvonkin-audit": ["--N", "64", "--T", "0.02", "--dt", "0.001"],
    "kpz-run": ["--N", "64", "--T", "0.01", "--dt", "0.001"],
    "kpz-compare": ["--N", "64", "--T", "0.005", "--dt", "0.001"],
    "mc-expmoment": [],
    "mc-feynmankac": ["--N", "64", "--T", "0.1", "--dt", "0.01"],
}


def _snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_reproducibility(tmp_path):
    assert set(REPRO_ARGS) == set(SUBCOMMANDS)
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"mc": {"n_paths": 2000}, "kpz": {"levels": [8.0, 16.0]}}))
    bad = []
    with Clock() as c:
        for name, args in REPRO_ARGS.items():
            out = tmp_path / name
            argv = [name, "--config", str(cfg), "--out", str(out), *args]
            main(argv)
            first = _snapshot(out)
            main(argv)
            second = _snapshot(out)
            if not first or first != second:
                bad.append(name)
    ok = not bad
    report("reproducibility", ok, f"{len(REPRO_ARGS) - len(bad)}/{len(REPRO_ARGS)} subcommands byte-identical"
           + (f", differing: {', '.join(bad)}" if bad else "") + f", {c.elapsed:.1f} s")
    assert ok
