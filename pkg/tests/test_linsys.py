import numpy as np
import pytest
import scipy.sparse as sp

from pnpf.errors import AllNeumann, NotConverged
from pnpf.fields import BoundaryData, GridFunction
from pnpf.linsys import LinSolveConfig, assemble_poisson, is_m_matrix, solve
from pnpf.mesh import GeometrySpec, TAG_DIRICHLET, build_uniform_grid, grid_mesh

RNG = np.random.default_rng(7)


def psi_bc(mesh, dirichlet_value=0.0):
    d = np.full(mesh.n_boundary, float(dirichlet_value))
    return BoundaryData.mixed(mesh, dirichlet=d, neumann=np.zeros(mesh.n_boundary))


def two_cell_channel():
    """2x1 cells on [0,1] x [0,0.5]; Dirichlet x-faces, Neumann y-faces."""
    return grid_mesh(2, 1, box=(0.0, 1.0, 0.0, 0.5))


class TestAssemblePoisson:

    def test_two_cell_interpolant(self):
        m = two_cell_channel()
        bnd_x = m.bnd_mid[:, 0]
        dir_vals = np.where(np.isclose(bnd_x, 1.0), 1.0, 0.0)
        bc = BoundaryData.mixed(m, dirichlet=dir_vals, neumann=np.zeros(m.n_boundary))
        a, b = assemble_poisson(m, eps=1.0, bc_psi=bc)
        psi = solve(a, b)
        assert psi == pytest.approx([0.25, 0.75], rel=1e-13)

    def test_constant_dirichlet_gives_constant(self):
        m = build_uniform_grid(GeometrySpec(nx=6, ny=4))
        a, b = assemble_poisson(m, eps=0.3, bc_psi=psi_bc(m, 1.7))
        psi = solve(a, b)
        assert np.allclose(psi, 1.7, atol=1e-12)

    def test_noncompatible_charge_still_solvable(self):
        m = build_uniform_grid(GeometrySpec(nx=5, ny=5))
        charge = RNG.normal(size=m.n_volumes) + 1.0   # nonzero mean
        a, b = assemble_poisson(m, eps=1.0, bc_psi=psi_bc(m))
        psi = solve(a, b + m.vol * charge)
        assert np.all(np.isfinite(psi))

    def test_all_neumann_rejected(self):
        m = build_uniform_grid(
            GeometrySpec(nx=4, ny=4),
            tagger=lambda mid, box: np.ones(len(mid), dtype=np.int64))
        assert m.n_dirichlet == 0
        with pytest.raises(AllNeumann):
            assemble_poisson(m, eps=1.0, bc_psi=BoundaryData.mixed(
                m, dirichlet=np.zeros(m.n_boundary), neumann=np.zeros(m.n_boundary)))

    def test_symmetric_positive_definite(self):
        m = build_uniform_grid(GeometrySpec(nx=8, ny=6))
        a, _ = assemble_poisson(m, eps=0.1, bc_psi=psi_bc(m))
        dense = a.toarray()
        assert np.max(np.abs(dense - dense.T)) < 1e-14
        assert np.all(np.linalg.eigvalsh(dense) > 0)

    def test_manufactured_recovery(self):
        m = build_uniform_grid(GeometrySpec(nx=10, ny=10))
        a, _ = assemble_poisson(m, eps=1.0, bc_psi=psi_bc(m))
        x_exact = RNG.normal(size=m.n_volumes)
        b = a @ x_exact
        x = solve(a, b)
        assert np.max(np.abs(a @ x - b)) <= 1e-12 * max(1.0, np.max(np.abs(b)))


class TestSolve:

    def test_identity(self):
        b = RNG.normal(size=40)
        x = solve(sp.eye(40, format="csc"), b)
        assert np.allclose(x, b, atol=0.0)

    def test_zero_rhs(self):
        m = build_uniform_grid(GeometrySpec(nx=4, ny=4))
        a, _ = assemble_poisson(m, eps=1.0, bc_psi=psi_bc(m))
        assert np.all(solve(a, np.zeros(m.n_volumes)) == 0.0)

    @pytest.mark.parametrize("method", ["conjugate-gradient", "stabilized-biconjugate"])
    def test_iterative_methods(self, method):
        m = build_uniform_grid(GeometrySpec(nx=8, ny=8))
        a, b = assemble_poisson(m, eps=1.0, bc_psi=psi_bc(m, 1.0))
        x = solve(a, b, LinSolveConfig(method=method, rtol=1e-12))
        assert np.linalg.norm(a @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_not_converged(self):
        m = build_uniform_grid(GeometrySpec(nx=12, ny=12))
        a, b = assemble_poisson(m, eps=1.0, bc_psi=psi_bc(m, 1.0))
        b = b + m.vol * RNG.normal(size=m.n_volumes)
        with pytest.raises(NotConverged):
            solve(a, b, LinSolveConfig(method="conjugate-gradient",
                                       rtol=1e-14, max_iterations=2))

    def test_deterministic(self):
        m = build_uniform_grid(GeometrySpec(nx=8, ny=8))
        a, b = assemble_poisson(m, eps=1.0, bc_psi=psi_bc(m, 2.0))
        assert np.array_equal(solve(a, b), solve(a, b))


class TestMMatrixCheck:

    def test_accepts_m_matrix(self):
        a = sp.csc_matrix(np.array([[2.0, -1.0], [-0.5, 1.0]]))
        assert is_m_matrix(a)

    def test_rejects_positive_offdiag(self):
        a = sp.csc_matrix(np.array([[2.0, 0.5], [-0.5, 1.0]]))
        assert not is_m_matrix(a)

    def test_rejects_nonpositive_diagonal(self):
        a = sp.csc_matrix(np.array([[0.0, -1.0], [-0.5, 1.0]]))
        assert not is_m_matrix(a)
