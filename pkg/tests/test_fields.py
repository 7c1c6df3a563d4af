import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_field
from trrom.fields import (CAVITY, PERIODIC, Grid, GridMismatchError, VectorField, convection_tensor,
                          divergence, h10_inner, l2_inner, trilinear_b, trilinear_b_star)


def sin2pix(grid):
    return VectorField.from_functions(grid, lambda x, y: np.sin(2 * np.pi * x), lambda x, y: 0 * x)


class TestGrid:
    def test_rejects_small_or_degenerate(self):
        with pytest.raises(ValueError):
            Grid(3, 8, 1.0, 1.0, PERIODIC)
        with pytest.raises(ValueError):
            Grid(8, 8, 0.0, 1.0, PERIODIC)
        with pytest.raises(ValueError):
            Grid(8, 8, 1.0, 1.0, "channel")

    def test_staggered_shapes(self):
        g = Grid(8, 6, 1.0, 1.0, CAVITY)
        assert g.u_shape == (6, 9) and g.v_shape == (7, 8)
        p = Grid(8, 6, 1.0, 1.0, PERIODIC)
        assert p.u_shape == p.v_shape == (6, 8)

    def test_weights_positive_and_sum_to_area(self, small_grid):
        w = small_grid.ops.weights
        assert np.all(w > 0)
        n_u = small_grid.n_u
        area = small_grid.lx * small_grid.ly
        assert w[:n_u].sum() == pytest.approx(area, rel=1e-14)
        assert w[n_u:].sum() == pytest.approx(area, rel=1e-14)


class TestVectorField:
    def test_shape_and_finiteness_checked(self):
        g = Grid(4, 4, 1.0, 1.0, PERIODIC)
        with pytest.raises(ValueError):
            VectorField(np.zeros((4, 5)), np.zeros((4, 4)), g)
        bad = np.zeros((4, 4))
        bad[0, 0] = np.nan
        with pytest.raises(ValueError):
            VectorField(bad, np.zeros((4, 4)), g)

    def test_flat_round_trip(self, small_grid):
        f = random_field(small_grid, np.random.default_rng(0))
        g = VectorField.from_flat(f.flat(), small_grid)
        assert np.array_equal(g.u, f.u) and np.array_equal(g.v, f.v)


class TestL2:
    def test_constant_field_unit_square(self):
        g = Grid(16, 16, 1.0, 1.0, PERIODIC)
        one = VectorField.from_functions(g, lambda x, y: 1.0 + 0 * x, lambda x, y: 0 * x)
        assert l2_inner(one, one) == pytest.approx(1.0, rel=1e-14)

    def test_disjoint_components(self):
        g = Grid(16, 16, 1.0, 1.0, PERIODIC)
        a = sin2pix(g)
        b = VectorField.from_functions(g, lambda x, y: 0 * x, lambda x, y: np.cos(2 * np.pi * y))
        assert l2_inner(a, b) == 0.0

    @pytest.mark.parametrize("bc", [PERIODIC, CAVITY])
    def test_sin_squared_converges_to_half(self, bc):
        errs = []
        for n in (16, 32):
            g = Grid(n, n, 1.0, 1.0, bc)
            a = sin2pix(g)
            errs.append(abs(l2_inner(a, a) - 0.5))
        # periodic trapezoid is exact for trig polynomials; cavity nodes too
        assert errs[-1] <= max(4e-2 * (1 / 32) ** 2, 1e-13)

    def test_grid_mismatch(self):
        a = VectorField.zeros(Grid(8, 8, 1.0, 1.0, PERIODIC))
        b = VectorField.zeros(Grid(8, 8, 1.0, 1.0, CAVITY))
        with pytest.raises(GridMismatchError):
            l2_inner(a, b)


class TestH10:
    def test_constant_has_zero_gradient(self, small_grid):
        c = VectorField.from_functions(small_grid, lambda x, y: 2.0 + 0 * x, lambda x, y: -1.0 + 0 * x)
        assert abs(h10_inner(c, c)) < 1e-20

    @pytest.mark.parametrize("bc", [PERIODIC, CAVITY])
    def test_sin_converges_to_two_pi_squared_at_second_order(self, bc):
        exact = 2 * np.pi**2
        errs = []
        for n in (32, 64, 128):
            g = Grid(n, n, 1.0, 1.0, bc)
            a = sin2pix(g)
            errs.append(abs(h10_inner(a, a) - exact))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 1.8)

    def test_bilinear_scaling_exact(self, small_grid):
        rng = np.random.default_rng(1)
        a, b = random_field(small_grid, rng), random_field(small_grid, rng)
        assert h10_inner(2.0 * a, b) == 2.0 * h10_inner(a, b)


class TestTrilinear:
    def test_skew_vanishes_on_diagonal(self, small_grid):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a, v = random_field(small_grid, rng), random_field(small_grid, rng)
            scale = math.sqrt(l2_inner(a, a)) * h10_inner(v, v)
            assert abs(trilinear_b_star(a, v, v)) <= 1e-12 * scale

    def test_constants_give_zero(self, small_grid):
        c = VectorField.from_functions(small_grid, lambda x, y: 1.0 + 0 * x, lambda x, y: 0.5 + 0 * x)
        assert abs(trilinear_b_star(c, c, c)) < 1e-14

    def test_uniform_advection_of_trig_fields(self):
        # b*(a, v, w) with a = (1, 0), v = (sin x, 0), w = (cos x, 0) on [0, 2pi]^2:
        # the continuous value is 2 pi^2, approached at second order
        vals = []
        for n in (32, 64):
            g = Grid(n, n, 2 * np.pi, 2 * np.pi, PERIODIC)
            a = VectorField.from_functions(g, lambda x, y: 1.0 + 0 * x, lambda x, y: 0 * x)
            v = VectorField.from_functions(g, lambda x, y: np.sin(x), lambda x, y: 0 * x)
            w = VectorField.from_functions(g, lambda x, y: np.cos(x), lambda x, y: 0 * x)
            vals.append(trilinear_b_star(a, v, w))
            # independent quadrature of the same centred-difference integrand
            xu, _ = g.u_coords()
            dv = (np.sin(xu + g.hx) - np.sin(xu - g.hx)) / (2 * g.hx)
            brute = np.sum(dv * np.cos(xu)) * g.hx * g.hy
            assert vals[-1] == pytest.approx(brute, rel=1e-12)
        errs = [abs(x - 2 * np.pi**2) for x in vals]
        assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.1)

    def test_tensor_matches_pointwise_forms(self, small_grid):
        rng = np.random.default_rng(3)
        modes = rng.standard_normal((3, small_grid.n_dof))
        T = convection_tensor(small_grid, modes, modes, modes)
        f = [VectorField.from_flat(m, small_grid) for m in modes]
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    assert T[i, j, k] == pytest.approx(trilinear_b(f[j], f[k], f[i]), rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([PERIODIC, CAVITY]))
def test_inner_products_symmetric_and_cauchy_schwarz(seed, bc):
    g = Grid(6, 5, 1.0, 2.0, bc)
    rng = np.random.default_rng(seed)
    a, b = random_field(g, rng), random_field(g, rng)
    for ip in (l2_inner, h10_inner):
        ab, ba = ip(a, b), ip(b, a)
        assert ab == pytest.approx(ba, rel=1e-12, abs=1e-12)
        assert ab**2 <= ip(a, a) * ip(b, b) * (1 + 1e-12)
        assert ip(a, a) >= 0


def test_divergence_of_streamfunction_field_is_zero():
    from trrom.fom import taylor_green_exact
    g = Grid(16, 16, 2 * np.pi, 2 * np.pi, PERIODIC)
    assert np.max(np.abs(divergence(taylor_green_exact(0.0, 0.01, g)))) < 1e-12
