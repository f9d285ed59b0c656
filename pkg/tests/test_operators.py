import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnpf.errors import DivisionDegenerate, MeshMismatch
from pnpf.fields import BoundaryData, EdgeFunction, GridFunction
from pnpf.mesh import GeometrySpec, build_electrode_domain, build_uniform_grid, grid_mesh
from pnpf.operators import (divergence, edge_difference, edge_inner_product,
                            grad_norm_2, harm_kernel, harmonic_average,
                            inner_product, laplacian, norm_2, norm_inf,
                            tilde_gradient, weighted_laplacian)

RNG = np.random.default_rng(20240817)


def comb_mesh():
    return build_electrode_domain(GeometrySpec(
        kind="electrode-comb", nx=24, ny=12, x_min=-1.0, x_max=1.0,
        y_min=0.0, y_max=1.0, teeth_per_side=2, tooth_width=0.15,
        tooth_depth=0.5, gap_half_width=0.2))


def gf(mesh, values):
    return GridFunction(values=np.asarray(values, dtype=float), mesh=mesh)


class TestHarmonicAverage:

    def test_constant_identity(self):
        m = build_uniform_grid(GeometrySpec(nx=3, ny=3))
        a = harmonic_average(gf(m, np.full(m.n_volumes, 0.7)))
        assert np.allclose(a.interior, 0.7)
        assert np.allclose(a.boundary, 0.7)

    def test_hand_value_equal_volumes(self):
        m = grid_mesh(2, 1, box=(0.0, 2.0, 0.0, 1.0))
        a = harmonic_average(gf(m, [1.0, 3.0]))
        assert a.interior[0] == pytest.approx(1.5, rel=1e-15)

    def test_zero_absorbs(self):
        m = grid_mesh(2, 1, box=(0.0, 2.0, 0.0, 1.0))
        a = harmonic_average(gf(m, [0.0, 1.0]))
        assert a.interior[0] == 0.0

    def test_both_zero_raises(self):
        m = grid_mesh(2, 1, box=(0.0, 2.0, 0.0, 1.0))
        with pytest.raises(DivisionDegenerate):
            harmonic_average(gf(m, [0.0, 0.0]))

    @given(ui=st.floats(1e-6, 1e6), uj=st.floats(1e-6, 1e6),
           mi=st.floats(0.1, 10.0), mj=st.floats(0.1, 10.0))
    @settings(max_examples=200, deadline=None)
    def test_bounded_by_inputs_when_positive(self, ui, uj, mi, mj):
        h = float(harm_kernel(ui, uj, mi, mj))
        assert min(ui, uj) <= h * (1 + 1e-12) and h <= max(ui, uj) * (1 + 1e-12)

    @given(ui=st.floats(0.1, 10.0), uj=st.floats(0.1, 10.0),
           bump=st.floats(1e-3, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_each_argument(self, ui, uj, bump):
        lo = float(harm_kernel(ui, uj, 1.0, 2.0))
        hi_i = float(harm_kernel(ui + bump, uj, 1.0, 2.0))
        hi_j = float(harm_kernel(ui, uj + bump, 1.0, 2.0))
        assert hi_i >= lo - 1e-14 and hi_j >= lo - 1e-14


class TestEdgeDifference:

    def test_constant_is_flat(self):
        m = build_uniform_grid(GeometrySpec(nx=4, ny=4))
        d = edge_difference(gf(m, np.full(m.n_volumes, 3.3)), BoundaryData.insulated(m))
        assert np.all(d.interior == 0.0)
        assert np.all(d.boundary == 0.0)

    def test_antisymmetry_two_volumes(self):
        m = grid_mesh(2, 1, box=(0.0, 2.0, 0.0, 1.0))
        d = edge_difference(gf(m, [1.0, 4.0]), BoundaryData.insulated(m))
        # D u_{1,sigma} = 3 seen from the low-index side, -3 from the other
        assert d.interior[0] == 3.0
        assert -d.interior[0] == -3.0

    def test_neumann_rule(self):
        m = grid_mesh(2, 1, box=(0.0, 2.0, 0.0, 1.0))
        # every boundary edge has d_sigma = 0.5 on this mesh
        bc = BoundaryData.mixed(m, dirichlet=np.zeros(m.n_boundary),
                                neumann=np.full(m.n_boundary, 2.0))
        d = edge_difference(gf(m, np.zeros(2)), bc)
        from pnpf.mesh import TAG_NEUMANN
        neu = m.bnd_tag == TAG_NEUMANN
        assert np.allclose(d.boundary[neu], 2.0 * m.bnd_d[neu])
        assert np.allclose(d.boundary[neu], 1.0)


class TestWeightedLaplacian:

    def test_constant_gives_zero(self):
        m = comb_mesh()
        lap = laplacian(gf(m, np.full(m.n_volumes, 2.0)), BoundaryData.insulated(m))
        assert np.max(np.abs(lap.values)) < 1e-13

    def test_zero_mean_under_zero_flux(self):
        m = comb_mesh()
        g = gf(m, RNG.normal(size=m.n_volumes))
        lap = laplacian(g, BoundaryData.insulated(m))
        one = gf(m, np.ones(m.n_volumes))
        assert abs(inner_product(lap, one)) < 1e-12

    def test_cosine_refinement(self):
        # Delta (cos pi x cos pi y) = -2 pi^2 cos pi x cos pi y, zero normal
        # derivative on the whole boundary of the unit square
        errors = []
        for n in (16, 32, 64):
            m = build_uniform_grid(GeometrySpec(nx=n, ny=n))
            g = np.cos(np.pi * m.centers[:, 0]) * np.cos(np.pi * m.centers[:, 1])
            lap = laplacian(gf(m, g), BoundaryData.insulated(m))
            errors.append(np.max(np.abs(lap.values + 2 * np.pi**2 * g)))
        assert errors[0] / errors[1] > 3.0
        assert errors[1] / errors[2] > 3.0

    def test_symmetry_under_zero_flux(self):
        m = comb_mesh()
        a = gf(m, RNG.normal(size=m.n_volumes))
        b = gf(m, RNG.normal(size=m.n_volumes))
        bc = BoundaryData.insulated(m)
        assert inner_product(laplacian(a, bc), b) == pytest.approx(
            inner_product(a, laplacian(b, bc)), rel=1e-11, abs=1e-12)


class TestDivergence:

    def test_zero_flux(self):
        m = build_uniform_grid(GeometrySpec(nx=4, ny=3))
        f = EdgeFunction(np.zeros(m.n_interior), np.zeros(m.n_boundary), m)
        assert np.all(divergence(f).values == 0.0)

    def test_two_cell_balance(self):
        m = grid_mesh(2, 1, box=(0.0, 2.0, 0.0, 1.0))
        phi = 0.37
        f = EdgeFunction(np.array([phi]), np.zeros(m.n_boundary), m)
        div = divergence(f).values
        assert div[0] == pytest.approx(m.int_m[0] * phi / m.vol[0], rel=1e-15)
        assert div[1] == pytest.approx(-m.int_m[0] * phi / m.vol[1], rel=1e-15)

    def test_total_divergence_vanishes(self):
        m = comb_mesh()
        f = EdgeFunction(RNG.normal(size=m.n_interior), np.zeros(m.n_boundary), m)
        total = inner_product(divergence(f), gf(m, np.ones(m.n_volumes)))
        assert abs(total) < 1e-13


class TestTildeGradient:

    def test_constant_vanishes_everywhere(self):
        # closed cells: boundary edges use the copied value, so the normals sum
        # to zero on every volume, not just interior ones
        m = comb_mesh()
        g = tilde_gradient(gf(m, np.full(m.n_volumes, 4.2)))
        assert np.max(np.abs(g.values)) < 1e-13

    def test_linear_x_on_interior_patch(self):
        m = build_uniform_grid(GeometrySpec(nx=9, ny=9))
        g = tilde_gradient(gf(m, 1.0 + m.centers[:, 0]))
        interior = ~np.isin(np.arange(m.n_volumes), m.exterior_volumes)
        assert np.allclose(g.values[interior, 0], 1.0, atol=0.02)
        assert np.allclose(g.values[interior, 1], 0.0, atol=1e-12)
        assert np.all(g.values[:, 2] == 0.0)

    def test_linear_y_symmetry(self):
        m = build_uniform_grid(GeometrySpec(nx=9, ny=9))
        gx = tilde_gradient(gf(m, 1.0 + m.centers[:, 0])).values[:, 0]
        gy = tilde_gradient(gf(m, 1.0 + m.centers[:, 1])).values[:, 1]
        # volumes are row-major, so the swap x <-> y transposes the grid
        assert np.allclose(gx.reshape(9, 9), gy.reshape(9, 9).T, atol=1e-12)


class TestInnerProductsAndNorms:

    def test_unit_inner_product_is_measure(self):
        for m in (build_uniform_grid(GeometrySpec(nx=5, ny=7)), comb_mesh()):
            one = gf(m, np.ones(m.n_volumes))
            assert inner_product(one, one) == pytest.approx(m.domain_measure, rel=1e-14)

    def test_norm_positive_definite(self):
        m = build_uniform_grid(GeometrySpec(nx=4, ny=4))
        f = gf(m, RNG.normal(size=m.n_volumes))
        assert norm_2(f) ** 2 == pytest.approx(inner_product(f, f), rel=1e-13)
        assert norm_2(gf(m, np.zeros(m.n_volumes))) == 0.0
        assert norm_inf(f) == np.max(np.abs(f.values))

    def test_mesh_mismatch(self):
        m1 = build_uniform_grid(GeometrySpec(nx=4, ny=4))
        m2 = build_uniform_grid(GeometrySpec(nx=4, ny=4))
        with pytest.raises(MeshMismatch):
            inner_product(gf(m1, np.zeros(16)), gf(m2, np.zeros(16)))

    @pytest.mark.parametrize("mesh_factory", [
        lambda: build_uniform_grid(GeometrySpec(nx=12, ny=10)),
        comb_mesh,
    ], ids=["uniform", "comb"])
    def test_summation_by_parts(self, mesh_factory):
        # <f1, div(g grad f2)> = -[g grad f1, grad f2] under zero-flux data
        m = mesh_factory()
        bc = BoundaryData.insulated(m)
        for _ in range(20):
            f1 = gf(m, RNG.normal(size=m.n_volumes))
            f2 = gf(m, RNG.normal(size=m.n_volumes))
            g = gf(m, RNG.uniform(0.5, 2.0, size=m.n_volumes))
            gw = harmonic_average(g)
            lhs = inner_product(f1, weighted_laplacian(gw, f2, bc))
            rhs = -edge_inner_product(gw, f1, f2)
            scale = max(abs(lhs), abs(rhs), 1e-30)
            assert abs(lhs - rhs) <= 1e-12 * scale

    def test_grad_norm_matches_edge_form(self):
        m = comb_mesh()
        f = gf(m, RNG.normal(size=m.n_volumes))
        w = EdgeFunction(np.ones(m.n_interior), np.ones(m.n_boundary), m)
        assert grad_norm_2(f) ** 2 == pytest.approx(
            edge_inner_product(w, f, f), rel=1e-13)
