"""Grid, edge, and boundary data containers tied to a mesh."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MeshMismatch, MissingBoundaryData
from .mesh import Mesh, TAG_DIRICHLET, TAG_NEUMANN


@dataclass
class GridFunction:
    """One real value per control volume."""

    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_volumes,):
            raise MeshMismatch(
                f"grid function of length {self.values.shape} on a mesh with "
                f"{self.mesh.n_volumes} volumes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function holds non-finite entries")


@dataclass
class EdgeFunction:
    """One real value per edge, interior edges first, then boundary edges.

    Interior values follow the mesh orientation convention (lower volume
    index to higher); signed quantities such as fluxes are positive in that
    direction.
    """

    interior: np.ndarray
    boundary: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        self.interior = np.asarray(self.interior, dtype=float)
        self.boundary = np.asarray(self.boundary, dtype=float)
        if self.interior.shape != (self.mesh.n_interior,) or \
                self.boundary.shape != (self.mesh.n_boundary,):
            raise MeshMismatch("edge function length does not match the mesh edge count")


@dataclass
class VectorGridFunction:
    """Per-volume vector with (x, y, z) components; z is identically 0 in 2D."""

    values: np.ndarray          # (N, 3)
    mesh: Mesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_volumes, 3):
            raise MeshMismatch("vector grid function must have 3 components per volume")


@dataclass
class BoundaryData:
    """Boundary values for one field over every exterior edge.

    ``zero_difference=True`` models insulated / zero-flux fields (the discrete
    difference across every exterior edge vanishes).  Otherwise Dirichlet-tagged
    edges read ``dirichlet`` and Neumann-tagged edges read ``neumann`` (the
    normal-derivative datum; the operator difference is value * d_sigma).
    """

    mesh: Mesh
    zero_difference: bool = False
    dirichlet: np.ndarray | None = None
    neumann: np.ndarray | None = None

    @classmethod
    def insulated(cls, mesh: Mesh) -> "BoundaryData":
        return cls(mesh=mesh, zero_difference=True)

    @classmethod
    def mixed(cls, mesh: Mesh, dirichlet, neumann) -> "BoundaryData":
        dirichlet = np.asarray(dirichlet, dtype=float)
        neumann = np.asarray(neumann, dtype=float)
        if dirichlet.shape != (mesh.n_boundary,) or neumann.shape != (mesh.n_boundary,):
            raise MeshMismatch("boundary data arrays must cover every exterior edge")
        return cls(mesh=mesh, dirichlet=dirichlet, neumann=neumann)

    def check_covers(self) -> None:
        if self.zero_difference:
            return
        mesh = self.mesh
        dir_mask = mesh.bnd_tag == TAG_DIRICHLET
        neu_mask = mesh.bnd_tag == TAG_NEUMANN
        if self.dirichlet is None or np.any(~np.isfinite(self.dirichlet[dir_mask])):
            raise MissingBoundaryData("Dirichlet edge without a boundary value")
        if self.neumann is None or np.any(~np.isfinite(self.neumann[neu_mask])):
            raise MissingBoundaryData("Neumann edge without a boundary value")
