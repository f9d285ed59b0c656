import numpy as np
import pytest

from pnpf.errors import DegenerateGeometry, ZeroResolution
from pnpf.mesh import (GeometrySpec, TAG_DIRICHLET, TAG_NEUMANN,
                       build_electrode_domain, build_uniform_grid,
                       check_regularity, comb_solid_mask, grid_mesh)


def comb_spec(nx=32, ny=16, teeth=2, width=0.15, depth=0.5):
    return GeometrySpec(kind="electrode-comb", nx=nx, ny=ny,
                        x_min=-1.0, x_max=1.0, y_min=0.0, y_max=1.0,
                        teeth_per_side=teeth, tooth_width=width,
                        tooth_depth=depth, gap_half_width=0.2)


class TestUniformGrid:

    def test_2x2_unit_square(self):
        m = build_uniform_grid(GeometrySpec(nx=2, ny=2))
        assert m.n_volumes == 4
        assert np.allclose(m.vol, 0.25)
        assert m.n_interior == 4
        assert np.allclose(m.int_tau, 1.0)
        assert m.n_boundary == 8

    def test_partition_of_unity(self):
        m = build_uniform_grid(GeometrySpec(nx=4, ny=2))
        assert m.vol.sum() == pytest.approx(1.0, abs=0.0)

    def test_3x3_edge_geometry(self):
        m = build_uniform_grid(GeometrySpec(nx=3, ny=3))
        assert np.allclose(m.int_m, 1.0 / 3.0)
        assert np.allclose(m.int_d, 1.0 / 3.0)
        assert np.allclose(m.int_tau, 1.0)

    def test_zero_resolution(self):
        with pytest.raises(ZeroResolution):
            build_uniform_grid(GeometrySpec(nx=1, ny=8))
        with pytest.raises(ZeroResolution):
            build_uniform_grid(GeometrySpec(nx=8, ny=0))

    def test_interior_orientation(self):
        m = build_uniform_grid(GeometrySpec(nx=5, ny=3))
        assert np.all(m.int_i < m.int_j)
        # normals are unit and point from i to j
        assert np.allclose(np.linalg.norm(m.int_normal, axis=1), 1.0)
        d = m.centers[m.int_j] - m.centers[m.int_i]
        assert np.all(np.einsum("ed,ed->e", d, m.int_normal[:, :2]) > 0)

    def test_default_tagging(self):
        m = build_uniform_grid(GeometrySpec(nx=4, ny=4))
        on_x = np.isclose(np.abs(m.bnd_mid[:, 0] - 0.5), 0.5)
        assert np.all(m.bnd_tag[on_x] == TAG_DIRICHLET)
        assert np.all(m.bnd_tag[~on_x] == TAG_NEUMANN)


class TestMeshInvariants:

    @pytest.mark.parametrize("mesh", [
        build_uniform_grid(GeometrySpec(nx=7, ny=5)),
        build_electrode_domain(comb_spec()),
    ], ids=["uniform", "comb"])
    def test_partition(self, mesh):
        assert abs(mesh.vol.sum() - mesh.domain_measure) <= 1e-12 * mesh.domain_measure

    @pytest.mark.parametrize("mesh", [
        build_uniform_grid(GeometrySpec(nx=7, ny=5)),
        build_electrode_domain(comb_spec()),
    ], ids=["uniform", "comb"])
    def test_cell_closure(self, mesh):
        assert mesh.closure_defect() < 1e-13

    def test_tag_completeness(self):
        mesh = build_electrode_domain(comb_spec())
        assert np.all((mesh.bnd_tag == TAG_DIRICHLET) | (mesh.bnd_tag == TAG_NEUMANN))
        n1 = set(mesh.dirichlet_volumes)
        n2 = set(mesh.neumann_volumes)
        n3 = set(mesh.exterior_volumes)
        assert n1 | n2 <= n3

    def test_orthogonality(self):
        # segment x_i x_j parallel to the edge normal -> orthogonal to the edge
        mesh = build_electrode_domain(comb_spec())
        d = mesh.centers[mesh.int_j] - mesh.centers[mesh.int_i]
        cross = d[:, 0] * mesh.int_normal[:, 1] - d[:, 1] * mesh.int_normal[:, 0]
        assert np.max(np.abs(cross)) < 1e-14


class TestRegularity:

    def test_uniform_square_value(self):
        m = build_uniform_grid(GeometrySpec(nx=6, ny=6))
        rep = check_regularity(m)
        assert rep.c0 == pytest.approx(0.5 / np.sqrt(2.0), rel=1e-14)
        assert rep.ok

    def test_two_by_one_congruent_cells(self):
        m = grid_mesh(2, 1, box=(0.0, 2.0, 0.0, 1.0))
        rep = check_regularity(m)
        assert rep.c0 == pytest.approx(0.5 / np.sqrt(2.0), rel=1e-14)

    @pytest.mark.parametrize("mesh", [
        build_uniform_grid(GeometrySpec(nx=9, ny=4)),
        build_electrode_domain(comb_spec()),
    ], ids=["uniform", "comb"])
    def test_positive(self, mesh):
        assert check_regularity(mesh).ok


class TestElectrodeDomain:

    def test_degenerate_comb_is_rectangle(self):
        spec = comb_spec(teeth=0, width=0.0, depth=0.0)
        m = build_electrode_domain(spec)
        assert m.n_volumes == spec.nx * spec.ny
        # tagging rule: the x-faces and the outer top/bottom strips are biased
        # electrodes; only the channel mouth |x| <= gap is zero-charge
        neu = m.bnd_tag == TAG_NEUMANN
        assert np.all(np.abs(m.bnd_mid[neu, 0]) <= spec.gap_half_width)
        dirich = m.bnd_tag == TAG_DIRICHLET
        assert np.all(np.abs(m.bnd_mid[dirich, 0]) > spec.gap_half_width)

    def test_comb_connected_and_simply_connected(self):
        spec = comb_spec()
        m = build_electrode_domain(spec)

        # independent rasterization oracle: flood fill on a fresh mask
        solid = comb_solid_mask(spec)
        keep = ~solid
        assert m.n_volumes == int(keep.sum())
        labels = _flood_labels(keep)
        assert labels.max() == 1          # one connected component

        # Euler characteristic of the fluid cell complex: 1 for a comb whose
        # teeth attach to the outer wall (no enclosed holes)
        assert _euler_characteristic(keep) == 1

    def test_teeth_overlapping_channel(self):
        with pytest.raises(DegenerateGeometry):
            build_electrode_domain(comb_spec(depth=0.9))

    def test_disconnected_fluid_rejected(self):
        # a full-width solid wall splits the box into two components
        keep = np.ones((4, 6), dtype=bool)
        keep[:, 3] = False
        from pnpf.mesh import _connected
        assert not _connected(keep)


def _flood_labels(keep):
    ny, nx = keep.shape
    labels = np.zeros((ny, nx), dtype=int)
    current = 0
    for sy, sx in zip(*np.nonzero(keep)):
        if labels[sy, sx]:
            continue
        current += 1
        stack = [(sy, sx)]
        labels[sy, sx] = current
        while stack:
            iy, ix = stack.pop()
            for jy, jx in ((iy + 1, ix), (iy - 1, ix), (iy, ix + 1), (iy, ix - 1)):
                if 0 <= jy < ny and 0 <= jx < nx and keep[jy, jx] and not labels[jy, jx]:
                    labels[jy, jx] = current
                    stack.append((jy, jx))
    return labels


def _euler_characteristic(keep):
    ny, nx = keep.shape
    faces = int(keep.sum())
    verts = set()
    edges = set()
    for iy, ix in zip(*np.nonzero(keep)):
        corners = [(iy, ix), (iy, ix + 1), (iy + 1, ix), (iy + 1, ix + 1)]
        verts.update(corners)
        edges.update({
            ((iy, ix), (iy, ix + 1)), ((iy + 1, ix), (iy + 1, ix + 1)),
            ((iy, ix), (iy + 1, ix)), ((iy, ix + 1), (iy + 1, ix + 1))})
    return len(verts) - len(edges) + faces


class TestSummaryDump:

    def test_schema(self):
        m = build_uniform_grid(GeometrySpec(nx=2, ny=2))
        text = m.summary_csv()
        lines = text.strip().splitlines()
        assert lines[0] == "record,index,x,y,measure,kind,i,j,d_sigma,tau,tag"
        assert sum(1 for ln in lines if ln.startswith("volume,")) == 4
        assert sum(1 for ln in lines if ln.startswith("edge,")) == 12
        assert "exterior-dirichlet" in text and "exterior-neumann" in text

    def test_deterministic(self):
        m = build_electrode_domain(comb_spec(nx=16, ny=8))
        assert m.summary_csv() == m.summary_csv()
