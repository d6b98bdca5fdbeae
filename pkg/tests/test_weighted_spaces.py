import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_field
from parapde.errors import ContractError, RangeError
from parapde.spectral_core import Field, Grid, SpaceTimeField
from parapde.weighted_spaces import (
    NormSpec,
    Weight,
    besov_norm,
    block_sup_profile,
    gradient_interpolation_check,
    holder_norm,
    interpolation_check,
    localized_norm,
    lp_norm,
    norm,
    norm_report,
    parabolic_norm,
    sobolev_norm,
    time_lq_norm,
)

INF = math.inf


class TestWeight:
    def test_values(self):
        g = Grid(1, 64, 4.0)
        w = Weight(g, 1.5)
        np.testing.assert_allclose(w.values, (1 + g.x**2) ** -0.75)
        assert w.at(2.0) == pytest.approx(5 ** -0.75)

    def test_algebra(self):
        g = Grid(1, 32, 2.0)
        w = Weight(g, 0.5)
        np.testing.assert_allclose((w * w).values, w.power(2.0).values)
        np.testing.assert_allclose(w.power(2.0).values, w.values**2)

    def test_first_derivative_matches_finite_difference(self):
        g = Grid(1, 1024, 6.0)
        w = Weight(g, 1.0)
        fd = np.gradient(w.values, g.h)
        (an,) = w.derivatives(1)
        np.testing.assert_allclose(an[5:-5], fd[5:-5], atol=1e-4)

    def test_second_derivative_two_dims(self):
        g = Grid(2, 64, 3.0)
        w = Weight(g, 0.8)
        d2 = w.derivatives(2)  # (0,0), (0,1), (1,1)
        x, y = g.coords
        r2 = 1 + x * x + y * y
        exact_xy = 0.8 * 2.8 * x * y * r2 ** (-0.4 - 2.0)
        np.testing.assert_allclose(d2[1], exact_xy, atol=1e-12)

    def test_admissibility(self):
        # |grad rho| / rho = delta |x| / (1 + |x|^2) <= delta / 2
        g = Grid(1, 512, 10.0)
        assert Weight(g, 1.2).admissibility_constant() <= 0.6 + 1e-3

    def test_rejects_non_finite(self, grid1):
        with pytest.raises(RangeError):
            Weight(grid1, math.nan)


class TestBesov:
    def test_single_mode_profile(self):
        g = Grid(1, 256, math.pi)
        f = Field(g, np.cos(8 * g.x))  # block 3 only
        prof = block_sup_profile(f)
        assert prof[4] == pytest.approx(1.0, abs=1e-12)
        assert np.sum(prof) == pytest.approx(1.0, abs=1e-12)
        spec = NormSpec(0.5, INF, INF, Weight(g))
        assert besov_norm(f, spec) == pytest.approx(2 ** 1.5, rel=1e-12)

    def test_lp_of_constant(self):
        g = Grid(1, 64, 2.0)
        assert lp_norm(g, np.ones(64), 2.0) == pytest.approx(2.0)
        assert lp_norm(g, np.ones(64), INF) == 1.0

    @given(seed=st.integers(0, 5000), theta=st.floats(0.1, 0.9))
    def test_interpolation_inequality(self, seed, theta):
        g = Grid(1, 64, 4.0)
        f = Field(g, random_field(g, seed))
        s1 = NormSpec(1.0, 2.0, 2.0, Weight(g, 1.0))
        s2 = NormSpec(-0.5, INF, INF, Weight(g, 0.0))
        inv = lambda p: 0.0 if math.isinf(p) else 1 / p  # noqa: E731
        pq = 1 / (theta * inv(2.0) + (1 - theta) * 0.0) if theta > 0 else INF
        s = NormSpec(theta * 1.0 + (1 - theta) * -0.5, pq, pq, Weight(g, theta))
        rep = interpolation_check(f, theta, (s, s1, s2))
        assert rep.holds

    def test_interpolation_exponent_contract(self, grid1):
        f = Field(grid1, np.sin(grid1.x))
        w = Weight(grid1)
        specs = (NormSpec(0.3, INF, INF, w), NormSpec(1.0, INF, INF, w), NormSpec(0.0, INF, INF, w))
        with pytest.raises(ContractError):
            interpolation_check(f, 0.5, specs)

    def test_spec_validation(self, grid1):
        with pytest.raises(RangeError):
            NormSpec(0.5, 0.5, INF, Weight(grid1))
        with pytest.raises(ContractError):
            NormSpec(0.5, 2.0, INF, Weight(grid1), flavor="holder_zygmund")
        with pytest.raises(ContractError):
            NormSpec(0.5, INF, INF, Weight(grid1), flavor="nope")


class TestClassicalNorms:
    def test_holder_quotient_against_brute_force(self):
        g = Grid(1, 64, math.pi)
        v = np.sin(g.x) + 0.3 * np.cos(3 * g.x)
        alpha = 0.5
        best = 0.0
        for m in range(1, int(math.ceil(1 / g.h)) + 1):
            best = max(best, np.max(np.abs(np.roll(v, -m) - v)) / (m * g.h) ** alpha)
        assert holder_norm(Field(g, v), 0, alpha) == pytest.approx(np.max(np.abs(v)) + best, rel=1e-12)

    def test_holder_first_order_of_sine(self):
        g = Grid(1, 128, math.pi)
        val = holder_norm(Field(g, np.sin(g.x)), 1, 0.0)
        assert val == pytest.approx(2.0, abs=1e-12)

    def test_sobolev_of_sine(self):
        g = Grid(1, 128, math.pi)
        f = Field(g, np.sin(g.x))
        assert sobolev_norm(f, 1, 2.0) == pytest.approx(2 * math.sqrt(math.pi), rel=1e-12)
        assert sobolev_norm(f, 0, 2.0) == pytest.approx(2 * math.sqrt(math.pi), rel=1e-12)

    def test_dispatch(self, grid1):
        f = Field(grid1, np.sin(grid1.x))
        w = Weight(grid1)
        assert norm(f, NormSpec(1.0, 2.0, 2.0, w, "sobolev_Hkp")) == pytest.approx(sobolev_norm(f, 1, 2.0))
        assert norm(f, NormSpec(0.5, INF, INF, w, "classical_holder")) == pytest.approx(holder_norm(f, 0, 0.5))
        rep = norm_report(f, NormSpec(0.2, INF, INF, w, "holder_zygmund"))
        assert rep["flavor"] == "holder_zygmund" and rep["value"] > 0
        with pytest.raises(ContractError):
            norm(f, NormSpec(1.5, 2.0, 2.0, w, "sobolev_Hkp"))

    def test_sup_time_flavor(self, grid1):
        t = np.linspace(0, 1, 3)
        v = np.stack([s * np.cos(4 * grid1.x) for s in (1.0, 3.0, 2.0)])
        F = SpaceTimeField(grid1, t, v)
        spec = NormSpec(0.0, INF, INF, Weight(grid1), "sup_time")
        assert norm(F, spec) == pytest.approx(3.0, rel=1e-12)
        with pytest.raises(ContractError):
            norm(F, NormSpec(0.0, INF, INF, Weight(grid1)))


class TestParabolic:
    def test_time_constant_field_has_no_quotient(self, grid1):
        f = Field(grid1, np.cos(4 * grid1.x))
        F = SpaceTimeField.constant_in_time(f, np.linspace(0, 1, 6))
        spec = NormSpec(0.5, INF, INF, Weight(grid1))
        assert parabolic_norm(F, 0.5) == pytest.approx(besov_norm(f, spec) + 1.0, rel=1e-12)

    def test_linear_in_time_quotient(self, grid1):
        t = np.linspace(0, 1, 11)
        F = SpaceTimeField(grid1, t, t[:, None] * np.ones((11, grid1.N)))
        # space part 2^{-1} * 1 (block -1 only); sup 1; quotient max |t-s|^{1/2} = 1
        assert parabolic_norm(F, 1.0) == pytest.approx(2.5, rel=1e-12)

    def test_time_lq(self):
        t = np.linspace(0, 1, 101)
        assert time_lq_norm(np.ones(101), t, 2.0) == pytest.approx(1.0)
        assert time_lq_norm(t, t, INF) == 1.0

    def test_range(self, grid1):
        F = SpaceTimeField.zeros(grid1, [0.0, 1.0])
        with pytest.raises(RangeError):
            parabolic_norm(F, 2.0)


class TestLocalized:
    def test_localized_norm_bounded_by_global(self):
        g = Grid(1, 128, 4.0)
        f = Field(g, np.sin(g.x) * np.exp(-g.x**2))
        w = Weight(g, 0.0)
        loc = localized_norm(f, 0.5, w, 0.5)
        # localizing by a cutoff costs at most a constant factor
        assert 0 < loc
        assert loc <= 10 * holder_norm(f, 0, 0.5)

    def test_r_range(self, grid1):
        with pytest.raises(RangeError):
            localized_norm(Field(grid1, np.zeros(grid1.N)), 0.5, Weight(grid1), 2.0)

    def test_gradient_interpolation(self):
        g = Grid(1, 256, 8.0)
        v = Field(g, np.exp(-g.x**2) * np.cos(3 * g.x))
        rep = gradient_interpolation_check(v, 4.0, 4.0, 4.0, 0.5, 0.5, 0.5)
        assert rep["ratio"] <= 1.0
        with pytest.raises(ContractError):
            gradient_interpolation_check(v, 4.0, 2.0, 2.0, 0.5, 0.5, 0.5)
