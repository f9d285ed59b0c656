"""Admissible orthogonal meshes: uniform rectangles and rasterized comb electrodes.

Control volumes are grid cells with the representative vertex at the cell
center, so the segment joining two adjacent centers is orthogonal to their
shared edge and the two-point flux is consistent.  Geometry is stored as flat
arrays (struct-of-arrays) so the discrete operators vectorize; the mesh is
immutable after construction.

Boundary tags refer to the electric potential only: every exterior edge is
zero-flux for mass and insulated for temperature regardless of its tag.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, ZeroResolution

#: potential boundary tags
TAG_DIRICHLET = 0
TAG_NEUMANN = 1

_TAG_NAMES = {TAG_DIRICHLET: "dirichlet", TAG_NEUMANN: "neumann"}


@dataclass(frozen=True)
class Edge:
    """One mesh edge in record form (used by dumps and tests; solvers use arrays)."""

    kind: str                 # "interior" | "exterior-dirichlet" | "exterior-neumann"
    i: int
    j: int | None             # None for exterior edges
    measure: float            # m(sigma)
    d: float                  # d_sigma
    tau: float                # m(sigma) / d_sigma
    normal: tuple[float, float, float]   # unit normal, oriented i->j / outward
    tag: int | None           # potential tag for exterior edges


@dataclass(frozen=True)
class GeometrySpec:
    """Parameters of a generated mesh.

    ``gap_half_width`` is the half-width of the central bulk channel that
    separates the two electrodes; exterior edges with midpoint |x| <= gap
    carry the zero-surface-charge (Neumann) tag, everything else is a biased
    electrode surface (Dirichlet).
    """

    kind: str = "unit-square"          # "unit-square" | "electrode-comb"
    nx: int = 8
    ny: int = 8
    x_min: float = 0.0
    x_max: float = 1.0
    y_min: float = 0.0
    y_max: float = 1.0
    teeth_per_side: int = 0
    tooth_width: float = 0.0
    tooth_depth: float = 0.0
    gap_half_width: float = 0.2

    def validate(self) -> None:
        if self.kind not in ("unit-square", "electrode-comb"):
            raise DegenerateGeometry(f"unknown geometry kind {self.kind!r}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise DegenerateGeometry("domain box has nonpositive extent")
        if self.kind == "electrode-comb":
            if self.gap_half_width <= 0 or self.gap_half_width >= self.x_max:
                raise DegenerateGeometry("gap half-width must lie in (0, x_max)")
            if self.teeth_per_side < 0 or self.tooth_width < 0 or self.tooth_depth < 0:
                raise DegenerateGeometry("comb parameters must be nonnegative")
            if self.tooth_depth > self.x_max - self.gap_half_width:
                raise DegenerateGeometry("teeth overlap the central channel")
            if self.teeth_per_side * self.tooth_width > self.y_max - self.y_min:
                raise DegenerateGeometry("teeth do not fit inside the box")


class Mesh:
    """Admissible orthogonal tessellation of a 2D domain.

    Attributes use a lower-index-first orientation convention: every interior
    edge stores (i, j) with i < j and its unit normal points from V_i to V_j.
    Normals carry a third (z) component, identically zero in 2D, so the data
    model is 3D-ready.
    """

    def __init__(self, centers, vol, int_i, int_j, int_m, int_d, int_mid,
                 bnd_vol, bnd_m, bnd_d, bnd_mid, bnd_normal, bnd_tag,
                 domain_measure, cell_diam):
        self.centers = np.asarray(centers, dtype=float)          # (N, 2)
        self.vol = np.asarray(vol, dtype=float)                  # (N,)
        self.int_i = np.asarray(int_i, dtype=np.int64)
        self.int_j = np.asarray(int_j, dtype=np.int64)
        self.int_m = np.asarray(int_m, dtype=float)
        self.int_d = np.asarray(int_d, dtype=float)
        self.int_mid = np.asarray(int_mid, dtype=float)          # (Ei, 2)
        self.bnd_vol = np.asarray(bnd_vol, dtype=np.int64)
        self.bnd_m = np.asarray(bnd_m, dtype=float)
        self.bnd_d = np.asarray(bnd_d, dtype=float)
        self.bnd_mid = np.asarray(bnd_mid, dtype=float)          # (Eb, 2)
        self.bnd_normal = np.asarray(bnd_normal, dtype=float)    # (Eb, 3) outward
        self.bnd_tag = np.asarray(bnd_tag, dtype=np.int64)
        self.domain_measure = float(domain_measure)
        self.cell_diam = np.asarray(cell_diam, dtype=float)      # (N,)

        self.n_volumes = self.centers.shape[0]
        self.n_interior = self.int_i.shape[0]
        self.n_boundary = self.bnd_vol.shape[0]

        self.int_tau = self.int_m / self.int_d
        self.bnd_tau = self.bnd_m / self.bnd_d

        # unit normals of interior edges, oriented i -> j, padded to 3D
        delta = self.centers[self.int_j] - self.centers[self.int_i]
        dist = np.linalg.norm(delta, axis=1)
        self.int_normal = np.zeros((self.n_interior, 3))
        if self.n_interior:
            self.int_normal[:, :2] = delta / dist[:, None]

        # distance from each adjacent center to the edge plane (orthogonal mesh)
        self.int_dist_i = np.abs(np.einsum(
            "ed,ed->e", self.int_mid - self.centers[self.int_i], self.int_normal[:, :2]))
        self.int_dist_j = np.abs(np.einsum(
            "ed,ed->e", self.int_mid - self.centers[self.int_j], self.int_normal[:, :2]))

        # incidence arrays for scatter-style operators: every (volume, edge)
        # pair once; interior edges appear for both volumes with opposite sign
        self.inc_vol = np.concatenate([self.int_i, self.int_j, self.bnd_vol])
        self.inc_sign = np.concatenate([
            np.ones(self.n_interior), -np.ones(self.n_interior), np.ones(self.n_boundary)])
        self.inc_m = np.concatenate([self.int_m, self.int_m, self.bnd_m])
        self.inc_normal = np.concatenate([
            self.int_normal, -self.int_normal, self.bnd_normal])

        self.regularity_c0 = self._regularity()

        for arr in (self.centers, self.vol, self.int_i, self.int_j, self.int_m,
                    self.int_d, self.int_tau, self.int_normal, self.int_mid,
                    self.bnd_vol, self.bnd_m, self.bnd_d, self.bnd_tau,
                    self.bnd_mid, self.bnd_normal, self.bnd_tag, self.cell_diam):
            arr.setflags(write=False)

    # -- boundary index sets ----------------------------------------------

    @property
    def dirichlet_volumes(self):
        """Indices of volumes touching a Dirichlet-tagged exterior edge."""
        return np.unique(self.bnd_vol[self.bnd_tag == TAG_DIRICHLET])

    @property
    def neumann_volumes(self):
        """Indices of volumes touching a Neumann-tagged exterior edge."""
        return np.unique(self.bnd_vol[self.bnd_tag == TAG_NEUMANN])

    @property
    def exterior_volumes(self):
        """Indices of volumes touching any exterior edge."""
        return np.unique(self.bnd_vol)

    @property
    def n_dirichlet(self) -> int:
        return int(np.sum(self.bnd_tag == TAG_DIRICHLET))

    # -- geometry checks ----------------------------------------------------

    def _regularity(self) -> float:
        """min over (volume, adjacent edge) of d(x_i, sigma) / diam(V_i)."""
        if self.n_interior + self.n_boundary == 0:
            return 0.0
        ratios = []
        if self.n_interior:
            ratios.append(self.int_dist_i / self.cell_diam[self.int_i])
            ratios.append(self.int_dist_j / self.cell_diam[self.int_j])
        if self.n_boundary:
            ratios.append(self.bnd_d / self.cell_diam[self.bnd_vol])
        return float(np.min(np.concatenate(ratios)))

    def worst_regularity_volume(self) -> int:
        ratios = np.full(self.n_volumes, np.inf)
        if self.n_interior:
            np.minimum.at(ratios, self.int_i, self.int_dist_i / self.cell_diam[self.int_i])
            np.minimum.at(ratios, self.int_j, self.int_dist_j / self.cell_diam[self.int_j])
        if self.n_boundary:
            np.minimum.at(ratios, self.bnd_vol, self.bnd_d / self.cell_diam[self.bnd_vol])
        return int(np.argmin(ratios))

    def closure_defect(self) -> float:
        """max_i | sum_{sigma in E_i} m(sigma) n_{i,sigma} | (zero for closed cells)."""
        acc = np.zeros((self.n_volumes, 3))
        np.add.at(acc, self.inc_vol, self.inc_m[:, None] * self.inc_normal)
        return float(np.max(np.linalg.norm(acc, axis=1))) if self.n_volumes else 0.0

    # -- record views --------------------------------------------------------

    def edges(self):
        """Yield every edge as an :class:`Edge` record (interior first)."""
        for e in range(self.n_interior):
            yield Edge("interior", int(self.int_i[e]), int(self.int_j[e]),
                       float(self.int_m[e]), float(self.int_d[e]),
                       float(self.int_tau[e]), tuple(self.int_normal[e]), None)
        for e in range(self.n_boundary):
            tag = int(self.bnd_tag[e])
            yield Edge(f"exterior-{_TAG_NAMES[tag]}", int(self.bnd_vol[e]), None,
                       float(self.bnd_m[e]), float(self.bnd_d[e]),
                       float(self.bnd_tau[e]), tuple(self.bnd_normal[e]), tag)

    def summary_csv(self) -> str:
        """CSV dump: one row per volume, one row per edge (golden-file format)."""
        out = io.StringIO()
        out.write("record,index,x,y,measure,kind,i,j,d_sigma,tau,tag\n")
        for i in range(self.n_volumes):
            out.write(f"volume,{i},{self.centers[i, 0]:.16e},{self.centers[i, 1]:.16e},"
                      f"{self.vol[i]:.16e},,,,,,\n")
        for idx, e in enumerate(self.edges()):
            j = "" if e.j is None else e.j
            tag = "" if e.tag is None else _TAG_NAMES[e.tag]
            out.write(f"edge,{idx},,,{e.measure:.16e},{e.kind},{e.i},{j},"
                      f"{e.d:.16e},{e.tau:.16e},{tag}\n")
        return out.getvalue()


@dataclass(frozen=True)
class RegularityReport:
    c0: float
    worst_volume: int
    ok: bool = field(default=True)


def check_regularity(mesh: Mesh) -> RegularityReport:
    """Report the achieved mesh-regularity constant C0 = min d(x_i, sigma)/diam(V_i)."""
    c0 = mesh.regularity_c0
    return RegularityReport(c0=c0, worst_volume=mesh.worst_regularity_volume(), ok=c0 > 0)


def _default_square_tagger(mid, box):
    """Potential tags for a plain rectangle: Dirichlet on x-faces, Neumann on y-faces."""
    x_min, x_max, y_min, y_max = box
    on_x_face = np.isclose(mid[:, 0], x_min) | np.isclose(mid[:, 0], x_max)
    return np.where(on_x_face, TAG_DIRICHLET, TAG_NEUMANN)


def _channel_tagger(gap_half_width):
    """Electrode tagging: |x| <= gap -> Neumann, x beyond the gap -> Dirichlet."""
    def tag(mid, box):
        return np.where(np.abs(mid[:, 0]) <= gap_half_width, TAG_NEUMANN, TAG_DIRICHLET)
    return tag


def grid_mesh(nx, ny, box=(0.0, 1.0, 0.0, 1.0), keep=None, tagger=None) -> Mesh:
    """Build a cell-centered rectangular mesh, optionally masked to a cell subset.

    ``keep`` is a boolean (ny, nx) mask of fluid cells (row-major, y outer);
    ``tagger(midpoints, box) -> tags`` assigns potential tags to exterior edges.
    This low-level factory accepts any nx, ny >= 1; the public builders add
    the spec'd validation on top.
    """
    x_min, x_max, y_min, y_max = box
    dx = (x_max - x_min) / nx
    dy = (y_max - y_min) / ny
    if keep is None:
        keep = np.ones((ny, nx), dtype=bool)
    keep = np.asarray(keep, dtype=bool)

    index = -np.ones((ny, nx), dtype=np.int64)
    ys, xs = np.nonzero(keep)
    index[ys, xs] = np.arange(len(xs))
    n = len(xs)

    cx = x_min + (xs + 0.5) * dx
    cy = y_min + (ys + 0.5) * dy
    centers = np.column_stack([cx, cy])
    vol = np.full(n, dx * dy)
    diam = np.full(n, np.hypot(dx, dy))

    int_i, int_j, int_m, int_d, int_mid = [], [], [], [], []
    bnd_vol, bnd_m, bnd_d, bnd_mid, bnd_nrm = [], [], [], [], []

    def neighbor(iy, ix):
        if 0 <= iy < ny and 0 <= ix < nx and keep[iy, ix]:
            return index[iy, ix]
        return -1

    for k in range(n):
        ix, iy = int(xs[k]), int(ys[k])
        x_c, y_c = cx[k], cy[k]
        # (neighbor cell, edge measure, center distance, edge midpoint, outward normal)
        faces = (
            (neighbor(iy, ix + 1), dy, dx, (x_c + dx / 2, y_c), (1.0, 0.0)),
            (neighbor(iy + 1, ix), dx, dy, (x_c, y_c + dy / 2), (0.0, 1.0)),
            (neighbor(iy, ix - 1), dy, dx, (x_c - dx / 2, y_c), (-1.0, 0.0)),
            (neighbor(iy - 1, ix), dx, dy, (x_c, y_c - dy / 2), (0.0, -1.0)),
        )
        for other, m_sig, d_cc, mid, nrm in faces:
            if other >= 0:
                if other > k:                    # store each interior edge once
                    int_i.append(k)
                    int_j.append(other)
                    int_m.append(m_sig)
                    int_d.append(d_cc)
                    int_mid.append(mid)
            else:
                bnd_vol.append(k)
                bnd_m.append(m_sig)
                bnd_d.append(d_cc / 2)
                bnd_mid.append(mid)
                bnd_nrm.append((nrm[0], nrm[1], 0.0))

    bnd_mid_arr = np.asarray(bnd_mid, dtype=float).reshape(-1, 2)
    tagger = tagger or _default_square_tagger
    tags = tagger(bnd_mid_arr, box) if len(bnd_vol) else np.zeros(0, dtype=np.int64)

    return Mesh(centers, vol, int_i, int_j, int_m, int_d,
                np.asarray(int_mid, dtype=float).reshape(-1, 2),
                bnd_vol, bnd_m, bnd_d, bnd_mid_arr,
                np.asarray(bnd_nrm, dtype=float).reshape(-1, 3), tags,
                domain_measure=dx * dy * n, cell_diam=diam)


def build_uniform_grid(spec: GeometrySpec, tagger=None) -> Mesh:
    """Uniform rectangular mesh over the spec's box (accuracy-test workhorse)."""
    if spec.nx < 2 or spec.ny < 2:
        raise ZeroResolution(f"nx={spec.nx}, ny={spec.ny}: both must be >= 2")
    spec.validate()
    box = (spec.x_min, spec.x_max, spec.y_min, spec.y_max)
    return grid_mesh(spec.nx, spec.ny, box=box, tagger=tagger)


def comb_solid_mask(spec: GeometrySpec) -> np.ndarray:
    """Boolean (ny, nx) mask of cells inside the electrode solid.

    Each electrode is a comb anchored at its outer x-face: ``teeth_per_side``
    rectangular teeth of height ``tooth_width`` reach ``tooth_depth`` into the
    fluid, evenly spaced in y.  A cell is solid when its center lies inside a
    tooth.  Degenerate combs (no teeth or zero depth) remove nothing.
    """
    nx, ny = spec.nx, spec.ny
    dx = (spec.x_max - spec.x_min) / nx
    dy = (spec.y_max - spec.y_min) / ny
    cx = spec.x_min + (np.arange(nx) + 0.5) * dx
    cy = spec.y_min + (np.arange(ny) + 0.5) * dy
    x, y = np.meshgrid(cx, cy)               # (ny, nx)

    solid = np.zeros((ny, nx), dtype=bool)
    nt, tw, td = spec.teeth_per_side, spec.tooth_width, spec.tooth_depth
    if nt == 0 or tw == 0.0 or td == 0.0:
        return solid

    height = spec.y_max - spec.y_min
    slot = (height - nt * tw) / (nt + 1)     # fluid spacing between teeth
    in_right = x >= spec.x_max - td
    in_left = x <= spec.x_min + td
    for t in range(nt):
        y_lo = spec.y_min + slot + t * (slot + tw)
        in_tooth_y = (y >= y_lo) & (y <= y_lo + tw)
        solid |= in_tooth_y & (in_right | in_left)
    return solid


def build_electrode_domain(spec: GeometrySpec) -> Mesh:
    """Rasterized comb-electrode domain with the channel/electrode tagging rule."""
    if spec.nx < 2 or spec.ny < 2:
        raise ZeroResolution(f"nx={spec.nx}, ny={spec.ny}: both must be >= 2")
    spec.validate()
    keep = ~comb_solid_mask(spec)
    if not keep.any():
        raise DegenerateGeometry("electrode solid fills the whole box")
    if not _connected(keep):
        raise DegenerateGeometry("fluid domain is disconnected")
    box = (spec.x_min, spec.x_max, spec.y_min, spec.y_max)
    return grid_mesh(spec.nx, spec.ny, box=box, keep=keep,
                     tagger=_channel_tagger(spec.gap_half_width))


def _connected(keep: np.ndarray) -> bool:
    """Flood fill over face-adjacent fluid cells."""
    ny, nx = keep.shape
    seen = np.zeros_like(keep)
    ys, xs = np.nonzero(keep)
    if len(ys) == 0:
        return False
    stack = [(int(ys[0]), int(xs[0]))]
    seen[ys[0], xs[0]] = True
    while stack:
        iy, ix = stack.pop()
        for jy, jx in ((iy + 1, ix), (iy - 1, ix), (iy, ix + 1), (iy, ix - 1)):
            if 0 <= jy < ny and 0 <= jx < nx and keep[jy, jx] and not seen[jy, jx]:
                seen[jy, jx] = True
                stack.append((jy, jx))
    return bool(np.all(seen[keep]))
