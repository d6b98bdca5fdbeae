import math

import numpy as np
import pytest

from parapde.enhancement import make_pair
from parapde.errors import BlowUpError, ConfigError, ContractError, NumericalError, ShapeError
from parapde.heat_ops import heat_arrays
from parapde.hjb_solver import (
    HJBConfig,
    HJBProblem,
    Hamiltonian,
    build_zvonkin,
    compose,
    derivative_energy_monitor,
    get_default_level,
    invert_map,
    max_principle_ratio,
    mollify_hamiltonian,
    solve_hjb_classical,
    solve_singular_hjb,
    split_initial_value,
    transform_coefficients,
)
from parapde.linear_para_solver import SolverConfig
from parapde.paracalc import LocalizationPlan
from parapde.spectral_core import Grid, SpaceTimeField


def cole_hopf(grid, v0, t):
    return np.log(heat_arrays(grid, np.exp(v0), t))


class TestHamiltonian:
    def test_families(self, grid1):
        Q = np.stack([np.sin(grid1.x)])
        v = np.zeros(grid1.N)
        np.testing.assert_allclose(Hamiltonian.power(1.0, 2.0)(grid1, 0.0, v, Q), 2 * np.abs(Q[0]))
        np.testing.assert_allclose(Hamiltonian.quadratic()(grid1, 0.0, v, Q), Q[0] ** 2, atol=1e-14)
        assert np.all(Hamiltonian.zero()(grid1, 0.0, v, Q) == 0.0)
        H = Hamiltonian.general(lambda t, c, v, Q: v + Q[0])
        np.testing.assert_allclose(H(grid1, 0.0, v + 1, Q), 1 + Q[0])

    def test_contracts(self):
        with pytest.raises(ContractError):
            Hamiltonian.power(2.0)
        with pytest.raises(ContractError):
            Hamiltonian("cubic")
        with pytest.raises(ContractError):
            Hamiltonian("general")
        with pytest.raises(ContractError):
            mollify_hamiltonian(Hamiltonian.quadratic(), 0.0)

    def test_mollified_quadratic(self, grid1):
        # Gaussian smoothing of |Q|^2 adds the variance 1/n^2; cutoffs are 1 in the bulk
        n = 10.0
        Hn = mollify_hamiltonian(Hamiltonian.quadratic(), n)
        Q = np.stack([0.5 * np.sin(grid1.x)])
        got = Hn(grid1, 0.0, np.zeros(grid1.N), Q)
        np.testing.assert_allclose(got, Q[0] ** 2 + 1 / n**2, atol=1e-12)

    def test_mollified_cuts_off_large_gradients(self, grid1):
        Hn = mollify_hamiltonian(Hamiltonian.quadratic(), 2.0)
        Q = np.full((1, grid1.N), 10.0)
        assert np.max(np.abs(Hn(grid1, 0.0, np.zeros(grid1.N), Q))) < 1e-6


class TestClassical:
    def test_cole_hopf(self):
        g = Grid(1, 128, math.pi)
        t = np.linspace(0, 0.1, 51)
        v0 = 0.5 * np.cos(g.x)
        res = solve_hjb_classical(HJBProblem(g, t, v0, Hamiltonian.quadratic()))
        ref = cole_hopf(g, v0, 0.1)
        assert np.max(np.abs(res.v.values[-1] - ref)) <= 1e-8
        assert res.steps == 50
        assert np.max(res.residuals) <= 1e-3

    def test_etdrk4_is_fourth_order(self):
        g = Grid(1, 64, math.pi)
        v0 = np.cos(g.x)
        ref = cole_hopf(g, v0, 0.2)
        errs = []
        for M in (6, 12):
            t = np.linspace(0, 0.2, M + 1)
            v = solve_hjb_classical(HJBProblem(g, t, v0, Hamiltonian.quadratic())).v.values[-1]
            errs.append(np.max(np.abs(v - ref)))
        assert errs[0] / errs[1] == pytest.approx(16, rel=0.3)

    def test_imex_euler_is_first_order(self):
        g = Grid(1, 64, math.pi)
        v0 = np.cos(g.x)
        ref = cole_hopf(g, v0, 0.2)
        errs = []
        for M in (100, 200):
            t = np.linspace(0, 0.2, M + 1)
            v = solve_hjb_classical(HJBProblem(g, t, v0, Hamiltonian.quadratic()), HJBConfig("imex-euler")).v.values[-1]
            errs.append(np.max(np.abs(v - ref)))
        assert errs[0] / errs[1] == pytest.approx(2, rel=0.15)

    def test_substeps(self):
        g = Grid(1, 64, math.pi)
        v0 = np.cos(g.x)
        t = np.linspace(0, 0.2, 5)
        res = solve_hjb_classical(HJBProblem(g, t, v0, Hamiltonian.quadratic()), HJBConfig(substeps=4))
        assert res.steps == 16
        assert np.max(np.abs(res.v.values[-1] - cole_hopf(g, v0, 0.2))) <= 1e-6

    def test_variable_diffusion_and_drift_in_2d(self):
        g = Grid(2, 32, math.pi)
        x, y = g.coords
        t = np.linspace(0, 0.05, 201)
        M = t.size
        a = np.zeros((M, 2, 2) + g.shape)
        a[:, 0, 0] = a[:, 1, 1] = 2.0
        B = np.zeros((M, 2) + g.shape)
        B[:, 0] = 1.0
        v0 = np.cos(x) * np.sin(2 * y)
        prob = HJBProblem(g, t, v0, a=a, B=B)
        res = solve_hjb_classical(prob)
        # v_t = 2 Lap v + v_x: v = e^{-10 t} cos(x + t) sin(2y)
        ref = math.exp(-10 * 0.05) * np.cos(x + 0.05) * np.sin(2 * y)
        assert np.max(np.abs(res.v.values[-1] - ref)) <= 1e-6
        assert prob.ellipticity() == pytest.approx(0.5)
        assert prob.ellipticity_band() == pytest.approx((2.0, 2.0))

    def test_step_restriction(self):
        g = Grid(1, 64, math.pi)
        t = np.linspace(0, 0.1, 3)
        a = np.full((3, 1, 1, 64), 3.0)
        with pytest.raises(ConfigError):
            solve_hjb_classical(HJBProblem(g, t, np.zeros(64), a=a))

    def test_blow_up(self):
        g = Grid(1, 32, math.pi)
        t = np.linspace(0, 0.5, 501)
        H = Hamiltonian.general(lambda tt, c, v, Q: v * v)
        with pytest.raises(BlowUpError) as exc:
            solve_hjb_classical(HJBProblem(g, t, np.full(32, 5.0), H), HJBConfig(cap=1e6))
        assert exc.value.stage == "blow-up"

    def test_problem_contracts(self, grid1):
        t = np.linspace(0, 0.1, 3)
        with pytest.raises(ShapeError):
            HJBProblem(grid1, t, np.zeros(5))
        with pytest.raises(ShapeError):
            HJBProblem(grid1, t, np.zeros(grid1.N), B=np.zeros((3, grid1.N)))
        with pytest.raises(ContractError):
            HJBProblem(grid1, t, np.zeros(grid1.N), f=np.full((3, grid1.N), np.nan))
        with pytest.raises(ConfigError):
            HJBConfig(scheme="rk4")

    def test_max_principle_and_energy(self):
        g = Grid(1, 128, math.pi)
        t = np.linspace(0, 0.1, 201)
        v0 = np.cos(g.x) + 0.3 * np.sin(3 * g.x)
        v = solve_hjb_classical(HJBProblem(g, t, v0)).v
        assert max_principle_ratio(v, v0) <= 1.0 + 1e-12
        mon = derivative_energy_monitor(v, p=2.0)
        assert np.all(np.diff(mon["energy"]) < 0)
        assert np.max(np.abs(mon["balance"])) <= 1e-3 * np.max(mon["dissipation"])


class TestMaps:
    def test_invert_1d(self):
        g = Grid(1, 256, math.pi)
        u = 0.3 * np.sin(g.x)[None]
        disp = invert_map(g, u)
        y = g.x
        back = y + disp[0] + 0.3 * np.sin(y + disp[0])
        assert np.max(np.abs(back - y)) <= 1e-4

    def test_invert_2d(self):
        g = Grid(2, 64, math.pi)
        x, y = g.coords
        u = 0.2 * np.stack([np.sin(x) * np.cos(y), np.cos(x + y)])
        disp = invert_map(g, u)
        px, py = x + disp[0], y + disp[1]
        err = np.max(np.abs(px + 0.2 * np.sin(px) * np.cos(py) - x)) + np.max(np.abs(py + 0.2 * np.cos(px + py) - y))
        assert err <= 1e-5

    def test_degenerate_map(self):
        g = Grid(1, 64, math.pi)
        with pytest.raises(NumericalError) as exc:
            invert_map(g, 2.0 * np.sin(g.x)[None])
        assert exc.value.stage == "map-degenerate"

    def test_compose_identity(self, grid1):
        v = np.cos(grid1.x)
        np.testing.assert_allclose(compose(grid1, v, np.zeros((1, grid1.N))), v, atol=1e-12)


def smooth_pair(g, t, amp):
    b = amp * np.stack([np.cos(4 * g.x) + np.sin(9 * g.x) * (1 + s) for s in t])
    return make_pair(SpaceTimeField(g, t, b), SpaceTimeField.zeros(g, t))


class TestZvonkin:
    def test_zero_drift(self):
        g = Grid(1, 64, math.pi)
        t = np.linspace(0, 0.1, 21)
        z = build_zvonkin(smooth_pair(g, t, 0.0), LocalizationPlan(g, t, 1.0), 1.0)
        assert z.grad_sup == 0.0 and z.below_threshold
        assert z.to_json()["bilipschitz"] == [1.0, 1.0]

    def test_damping_shrinks_gradient(self):
        g = Grid(1, 64, math.pi)
        t = np.linspace(0, 0.1, 101)
        pair = smooth_pair(g, t, 2.0)
        plan = LocalizationPlan(g, t, 1.0)
        gs = [build_zvonkin(pair, plan, lam, SolverConfig(tol=1e-9)).grad_sup for lam in (0.0, 16.0, 256.0)]
        assert gs[0] > gs[1] > gs[2] > 0
        z = build_zvonkin(pair, plan, 256.0, SolverConfig(tol=1e-9))
        lo, hi = z.bilipschitz
        # grad_sup samples |u'| on grid points only, slightly below its true sup
        slack = 1.1 * z.grad_sup
        assert 1 - slack <= lo <= hi <= 1 + slack
        prob, rep = transform_coefficients(z, pair, SpaceTimeField.zeros(g, t), Hamiltonian.zero())
        assert rep["round_trip"] <= 1e-3
        # a = |Phi'|^2 composed with the inverse
        assert (1 - slack) ** 2 <= rep["ellipticity_min"]
        assert rep["ellipticity_max"] <= (1 + slack) ** 2


class TestSingular:
    def test_split(self):
        g = Grid(1, 128, math.pi)
        phi = np.cos(g.x) + np.cos(40 * g.x)
        plan = LocalizationPlan(g, np.zeros(1), float(get_default_level(g)))
        hi, lo = split_initial_value(phi, plan)
        np.testing.assert_allclose(hi + lo, phi, atol=1e-13)
        assert np.max(np.abs(hi)) > 0.5

    def test_zero_drift_matches_classical(self):
        g = Grid(1, 64, math.pi)
        t = np.linspace(0, 0.1, 101)
        phi = 0.5 * np.cos(g.x) + 0.1 * np.cos(12 * g.x)
        res = solve_singular_hjb(smooth_pair(g, t, 0.0), Hamiltonian.quadratic(), phi, SolverConfig(tol=1e-11))
        ref = solve_hjb_classical(HJBProblem(g, t, phi, Hamiltonian.quadratic())).v.values
        assert np.max(np.abs(res.u.values - ref)) <= 1e-4
        np.testing.assert_allclose(res.u1.values + res.u2.values, res.u.values, atol=1e-14)
        assert res.manifest()["iterations"] == list(res.iterations)

    def test_audit(self):
        g = Grid(1, 64, math.pi)
        t = np.linspace(0, 0.1, 101)
        res = solve_singular_hjb(smooth_pair(g, t, 1.0), Hamiltonian.quadratic(), 0.3 * np.cos(g.x),
                                 SolverConfig(tol=1e-10), audit_lambda=64.0)
        assert res.audit["grad_sup"] <= 0.5
        assert 0.4 <= res.audit["ellipticity_min"] <= res.audit["ellipticity_max"] <= 2.2
