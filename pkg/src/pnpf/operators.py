"""Discrete calculus on admissible meshes.

Two-point differences, volume-weighted harmonic edge averages, divergence,
weighted Laplacian, a vertex gradient reconstruction, and the inner products
whose summation-by-parts identities the time schemes rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivisionDegenerate, MeshMismatch, MissingBoundaryData
from .fields import BoundaryData, EdgeFunction, GridFunction, VectorGridFunction
from .mesh import Mesh, TAG_DIRICHLET, TAG_NEUMANN


def _same_mesh(*objs):
    mesh = objs[0].mesh
    for o in objs[1:]:
        if o.mesh is not mesh:
            raise MeshMismatch("operands live on different meshes")
    return mesh


def harm_kernel(ui, uj, mi, mj):
    """Volume-weighted harmonic average, completed for mixed-sign inputs.

    The harmonic formula (mi+mj) ui uj / (mi uj + mj ui) is well defined and
    bounded whenever ui and uj share a sign (zero absorbs); for strictly
    opposite signs its denominator can vanish, so the volume-weighted
    arithmetic mean is used there instead.  Both-zero pairs return 0.
    """
    ui = np.asarray(ui, dtype=float)
    uj = np.asarray(uj, dtype=float)
    same = ui * uj >= 0.0
    den = mi * uj + mj * ui
    safe_den = np.where(same & (den != 0.0), den, 1.0)
    harm = (mi + mj) * ui * uj / safe_den
    harm = np.where(den == 0.0, 0.0, harm)
    arith = (mi * ui + mj * uj) / (mi + mj)
    return np.where(same, harm, arith)


def harm_kernel_partials(ui, uj, mi, mj):
    """(value, d/dui, d/duj) of :func:`harm_kernel`, branch-consistent."""
    ui = np.asarray(ui, dtype=float)
    uj = np.asarray(uj, dtype=float)
    same = ui * uj >= 0.0
    den = mi * uj + mj * ui
    ok = same & (den != 0.0)
    safe_den = np.where(ok, den, 1.0)
    harm = np.where(den == 0.0, 0.0, (mi + mj) * ui * uj / safe_den)
    dh_i = np.where(ok, (mi + mj) * mi * uj**2 / safe_den**2, 0.0)
    dh_j = np.where(ok, (mi + mj) * mj * ui**2 / safe_den**2, 0.0)
    w = mi + mj
    value = np.where(same, harm, (mi * ui + mj * uj) / w)
    d_i = np.where(same, dh_i, mi / w)
    d_j = np.where(same, dh_j, mj / w)
    return value, d_i, d_j


def harmonic_average(u: GridFunction) -> EdgeFunction:
    """Edge values of u: harmonic mean on interior edges, adjacent copy on
    boundary edges (zero-flux walls make the wall value multiplicatively inert).
    """
    mesh = u.mesh
    v = u.values
    ui = v[mesh.int_i]
    uj = v[mesh.int_j]
    if np.any((ui == 0.0) & (uj == 0.0)):
        raise DivisionDegenerate("harmonic average of two zero values")
    interior = harm_kernel(ui, uj, mesh.vol[mesh.int_i], mesh.vol[mesh.int_j])
    return EdgeFunction(interior=interior, boundary=v[mesh.bnd_vol], mesh=mesh)


@dataclass
class EdgeDifferences:
    """D u_{i,sigma} for every (volume, edge) pair, in oriented storage.

    ``interior[e]`` is u_j - u_i for the stored (i, j) orientation; the value
    seen from volume j is its negation.  ``boundary[e]`` is the difference
    seen from the single adjacent volume.
    """

    interior: np.ndarray
    boundary: np.ndarray
    mesh: Mesh


def edge_difference(u: GridFunction, bc: BoundaryData) -> EdgeDifferences:
    """Two-point differences: u_j - u_i inside, boundary-data rule outside."""
    mesh = _same_mesh(u, bc)
    interior = u.values[mesh.int_j] - u.values[mesh.int_i]
    if bc.zero_difference:
        boundary = np.zeros(mesh.n_boundary)
    else:
        bc.check_covers()
        boundary = np.where(
            mesh.bnd_tag == TAG_DIRICHLET,
            (bc.dirichlet if bc.dirichlet is not None else np.nan) - u.values[mesh.bnd_vol],
            (bc.neumann if bc.neumann is not None else np.nan) * mesh.bnd_d)
        if not np.all(np.isfinite(boundary)):
            raise MissingBoundaryData("incomplete boundary data")
    return EdgeDifferences(interior=interior, boundary=boundary, mesh=mesh)


def weighted_laplacian(f: EdgeFunction, g: GridFunction, bc: BoundaryData) -> GridFunction:
    """(1/m(V_i)) sum_sigma tau_sigma f_sigma D g_{i,sigma}; f == 1 gives the
    plain discrete Laplacian."""
    mesh = _same_mesh(f, g, bc)
    dg = edge_difference(g, bc)
    acc = np.zeros(mesh.n_volumes)
    flux_int = mesh.int_tau * f.interior * dg.interior
    np.add.at(acc, mesh.int_i, flux_int)
    np.add.at(acc, mesh.int_j, -flux_int)
    np.add.at(acc, mesh.bnd_vol, mesh.bnd_tau * f.boundary * dg.boundary)
    return GridFunction(values=acc / mesh.vol, mesh=mesh)


def laplacian(g: GridFunction, bc: BoundaryData) -> GridFunction:
    ones = EdgeFunction(interior=np.ones(g.mesh.n_interior),
                        boundary=np.ones(g.mesh.n_boundary), mesh=g.mesh)
    return weighted_laplacian(ones, g, bc)


def divergence(flux: EdgeFunction) -> GridFunction:
    """(1/m(V_i)) sum_sigma m(sigma) F_{i,sigma} for oriented normal fluxes.

    Antisymmetry across interior edges is structural in the oriented storage:
    the same value enters with +/- sign for the two adjacent volumes.
    """
    mesh = flux.mesh
    acc = np.zeros(mesh.n_volumes)
    mf = mesh.int_m * flux.interior
    np.add.at(acc, mesh.int_i, mf)
    np.add.at(acc, mesh.int_j, -mf)
    np.add.at(acc, mesh.bnd_vol, mesh.bnd_m * flux.boundary)
    return GridFunction(values=acc / mesh.vol, mesh=mesh)


def tilde_gradient(u: GridFunction) -> VectorGridFunction:
    """Vertex gradient reconstruction from harmonic edge averages.

    Each component is (1/m(V_i)) sum_sigma m(sigma) A_sigma(u) n_{i,sigma}^alpha
    with the adjacent value copied onto boundary edges; exact zero for constant
    u because the face normals of a closed cell sum to zero.
    """
    mesh = u.mesh
    edge_u = np.concatenate([
        harm_kernel(u.values[mesh.int_i], u.values[mesh.int_j],
                    mesh.vol[mesh.int_i], mesh.vol[mesh.int_j]),
        u.values[mesh.bnd_vol]])
    per_edge = np.concatenate([edge_u[:mesh.n_interior], edge_u[:mesh.n_interior],
                               edge_u[mesh.n_interior:]])
    acc = np.zeros((mesh.n_volumes, 3))
    np.add.at(acc, mesh.inc_vol, (mesh.inc_m * per_edge)[:, None] * mesh.inc_normal)
    return VectorGridFunction(values=acc / mesh.vol[:, None], mesh=mesh)


def inner_product(f: GridFunction, g: GridFunction) -> float:
    """<f, g> = sum_i m(V_i) f_i g_i."""
    mesh = _same_mesh(f, g)
    return float(np.sum(mesh.vol * f.values * g.values))


def edge_inner_product(w: EdgeFunction, a: GridFunction, b: GridFunction,
                       bc: BoundaryData | None = None) -> float:
    """[w grad a, grad b] = sum over interior edges of tau w Da Db.

    The form is defined over interior edges; ``bc`` is accepted for signature
    symmetry with the volume operators and is not consulted.
    """
    mesh = _same_mesh(w, a, b)
    da = a.values[mesh.int_j] - a.values[mesh.int_i]
    db = b.values[mesh.int_j] - b.values[mesh.int_i]
    return float(np.sum(mesh.int_tau * w.interior * da * db))


def norm_2(f: GridFunction) -> float:
    return float(np.sqrt(inner_product(f, f)))


def norm_inf(f: GridFunction) -> float:
    return float(np.max(np.abs(f.values))) if f.values.size else 0.0


def grad_norm_2(f: GridFunction) -> float:
    """|| grad_h f ||_2 over interior edges (zero-difference exterior)."""
    mesh = f.mesh
    df = f.values[mesh.int_j] - f.values[mesh.int_i]
    return float(np.sqrt(np.sum(mesh.int_tau * df * df)))
