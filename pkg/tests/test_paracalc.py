import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_field
from parapde.errors import ContractError, ShapeError
from parapde.paracalc import (
    LocalizationPlan,
    bony_parts,
    commutator,
    commutator_arrays,
    localize,
    localize_arrays,
    modified_paraproduct,
    para_lower,
    para_lower_mod,
    paraproduct,
    resonant,
    time_mollifier_weights,
    time_mollify,
)
from parapde.spectral_core import Field, Grid, SpaceTimeField, dealiased_product


class TestBony:
    @given(seed=st.integers(0, 10_000))
    def test_pieces_sum_to_product_1d(self, seed):
        g = Grid(1, 64, 2.0)
        a, b = random_field(g, seed), random_field(g, seed + 7)
        d = bony_parts(g, a, b)
        np.testing.assert_allclose(d["lower"] + d["resonant"] + d["upper"], dealiased_product(g, a, b), atol=1e-11)

    def test_pieces_sum_to_product_2d(self, grid2):
        a, b = random_field(grid2, 1), random_field(grid2, 2)
        d = bony_parts(grid2, a, b)
        np.testing.assert_allclose(d["lower"] + d["resonant"] + d["upper"], dealiased_product(grid2, a, b), atol=1e-11)

    @given(seed=st.integers(0, 10_000))
    def test_upper_is_swapped_lower(self, seed):
        g = Grid(1, 64, 1.0)
        a, b = random_field(g, seed), random_field(g, seed + 1)
        np.testing.assert_allclose(bony_parts(g, a, b)["upper"], para_lower(g, b, a), atol=1e-12)

    def test_separated_frequencies(self):
        g = Grid(1, 256, math.pi)
        low, high = np.cos(g.x), np.cos(32 * g.x)
        np.testing.assert_allclose(para_lower(g, low, high), low * high, atol=1e-12)
        np.testing.assert_allclose(resonant(g, low, high), 0.0, atol=1e-12)

    def test_same_block_is_resonant(self):
        g = Grid(1, 256, math.pi)
        a = np.cos(8 * g.x)
        np.testing.assert_allclose(resonant(g, a, a), a * a, atol=1e-12)

    def test_field_wrapper(self, grid1):
        f = Field(grid1, np.sin(grid1.x))
        lo, res, up = paraproduct(f, f)
        np.testing.assert_allclose((lo + res + up).values, dealiased_product(grid1, f.values, f.values), atol=1e-12)
        with pytest.raises(ShapeError):
            paraproduct(f, Field(Grid(1, 64, 1.0), np.zeros(64)))

    def test_rejects_off_grid(self, grid1):
        with pytest.raises(ShapeError):
            bony_parts(grid1, np.zeros(5), np.zeros(grid1.N))


class TestTimeMollifier:
    @pytest.mark.parametrize("j", [0, 1, 2, 3])
    def test_unit_mass_and_symmetry(self, j):
        w = time_mollifier_weights(j, 1e-3)
        assert w.sum() == pytest.approx(1.0, abs=1e-14)
        np.testing.assert_allclose(w, w[::-1])

    def test_identity_below_resolution(self):
        np.testing.assert_array_equal(time_mollifier_weights(8, 1e-3), [1.0])

    def test_preserves_affine_in_interior(self):
        w = time_mollifier_weights(1, 0.01)  # 2n + 1 = 49 weights
        n = (w.size - 1) // 2
        t = np.linspace(0, 1, 201)
        a = (3.0 * t - 1.0)[:, None] * np.ones((1, 4))
        out = time_mollify(a, w)
        np.testing.assert_allclose(out[n:-n], a[n:-n], atol=1e-12)
        np.testing.assert_allclose(time_mollify(np.ones((201, 4)), w), 1.0, atol=1e-13)

    @given(seed=st.integers(0, 1000))
    def test_short_and_long_kernels_agree(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((60, 3))
        w = time_mollifier_weights(1, 0.02)  # 25 weights: FFT path
        n = (w.size - 1) // 2
        idx = np.clip(np.arange(-n, 60 + n), 0, 59)
        ref = np.array([sum(w[l + n] * a[idx][m + n - l] for l in range(-n, n + 1)) for m in range(60)])
        np.testing.assert_allclose(time_mollify(a, w), ref, atol=1e-12)

    def test_time_constant_low_factor(self, grid1):
        times = np.linspace(0, 0.5, 51)
        a = np.broadcast_to(random_field(grid1, 3), (51, grid1.N)).copy()
        b = random_field(grid1, 4, lead=(51,))
        np.testing.assert_allclose(para_lower_mod(grid1, times, a, b), para_lower(grid1, a, b), atol=1e-12)

    def test_uniform_grid_required(self, grid1):
        t = np.array([0.0, 0.1, 0.3, 0.35])
        F = SpaceTimeField(grid1, t, np.zeros((4, grid1.N)))
        with pytest.raises(ContractError):
            modified_paraproduct(F, F)
        with pytest.raises(ContractError):
            modified_paraproduct(F.slice(0), F.slice(0))


class TestCommutator:
    @given(seed=st.integers(0, 10_000), c=st.floats(-3, 3))
    def test_trilinear(self, seed, c):
        g = Grid(1, 64, math.pi)
        a, a2, b, h = (random_field(g, seed + i) for i in range(4))
        lhs = commutator_arrays(g, a + c * a2, b, h)
        rhs = commutator_arrays(g, a, b, h) + c * commutator_arrays(g, a2, b, h)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_definition(self, grid1):
        f, g_, h = (Field(grid1, random_field(grid1, s)) for s in (1, 2, 3))
        com = commutator(f, g_, h).values
        ref = resonant(grid1, para_lower(grid1, f.values, g_.values), h.values) - dealiased_product(
            grid1, f.values, resonant(grid1, g_.values, h.values))
        np.testing.assert_allclose(com, ref, atol=1e-12)


class TestLocalization:
    def _plan(self, grid, L=1.0):
        return LocalizationPlan(grid, np.linspace(0, 1, 11), L)

    def test_cover_and_levels(self):
        g = Grid(1, 128, 8.0)
        plan = self._plan(g, 2.0)
        plan.check_cover()
        lev = plan.levels
        assert lev[0, 0] == 2
        assert lev[1, 0] == 3 and lev[0, 1] == 3
        assert plan.to_json()["levels"] == lev.tolist()

    @given(seed=st.integers(0, 1000), L=st.integers(0, 5))
    def test_split_is_exact(self, seed, L):
        g = Grid(1, 64, 4.0)
        plan = self._plan(g, float(L))
        a = random_field(g, seed, lead=(11,))
        rough, smooth = localize_arrays(plan, a)
        np.testing.assert_allclose(rough + smooth, a, atol=1e-13)

    def test_low_modes_stay_smooth(self):
        g = Grid(1, 256, math.pi)
        plan = self._plan(g, 3.0)
        a = np.broadcast_to(np.cos(g.x) + np.sin(4 * g.x), (11, g.N)).copy()
        rough, _ = localize_arrays(plan, a)
        np.testing.assert_allclose(rough, 0.0, atol=1e-13)

    def test_high_modes_are_rough_near_origin(self):
        g = Grid(1, 256, math.pi)
        plan = LocalizationPlan(g, np.zeros(1), 2.0)
        a = np.cos(32 * g.x)[None]
        rough, _ = localize_arrays(plan, a)
        inner = np.abs(g.x) < 0.5
        np.testing.assert_allclose(rough[0, inner], a[0, inner], atol=1e-12)

    def test_field_wrapper_checks_grid(self, grid1):
        plan = self._plan(grid1)
        F = SpaceTimeField.zeros(grid1, np.linspace(0, 1, 5))
        with pytest.raises(ShapeError):
            localize(F, plan)
