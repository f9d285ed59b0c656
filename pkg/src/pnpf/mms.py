"""Manufactured-solution harness: exact fields, compensating sources, and
convergence-order studies for both time schemes.

The exact fields share one separable mode phi(t, x, y) = A e^{-t} cos(pi x)
cos(pi y): concentrations and temperature are phi + offset, the potential is
phi itself.  The normal derivative of the mode vanishes on the whole boundary
of the unit square, so the zero-flux and insulated wall conditions hold
exactly and no boundary source correction is needed.  The potential carries
Dirichlet data on the x-faces and homogeneous Neumann data on the y-faces.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .fields import BoundaryData
from .mesh import GeometrySpec, Mesh, build_uniform_grid
from .model import LogState, ModelParams, NewtonConfig, SourceTerms, State
from .log_midpoint import LogMidpointStepper
from .semi_implicit import SemiImplicitStepper, initial_potential


@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form fields and sources for the unit-coefficient test system.

    ``amplitude = 0`` degenerates every field to a constant and all sources
    to zero, which is the sanity anchor for the source algebra.
    """

    amplitude: float = 0.1
    offset: float = 0.2
    decay: float = 1.0
    z: tuple[float, float] = (1.0, -1.0)

    def params(self) -> ModelParams:
        return ModelParams(z=list(self.z), nu=[1.0] * len(self.z),
                           eps=1.0, k=1.0, c_t=1.0)

    def _mode(self, t, x, y):
        """phi and its derivatives: value, d/dt, d/dx, d/dy, Laplacian."""
        damp = self.amplitude * np.exp(-self.decay * np.asarray(t, dtype=float))
        cx, cy = np.cos(np.pi * x), np.cos(np.pi * y)
        phi = damp * cx * cy
        return (phi, -self.decay * phi,
                -np.pi * damp * np.sin(np.pi * x) * cy,
                -np.pi * damp * cx * np.sin(np.pi * y),
                -2.0 * np.pi**2 * phi)

    def fields(self, t, x, y):
        """(c1, c2, T, psi) at the given points."""
        phi = self._mode(t, x, y)[0]
        base = phi + self.offset
        return base.copy(), base.copy(), base.copy(), phi

    def sources(self, t, x, y):
        """(f1, f2, f3, rho_f): residuals of the continuous system at the
        exact fields, assembled by the product rule on the shared mode."""
        phi, phi_t, phi_x, phi_y, lap = self._mode(t, x, y)
        base = phi + self.offset          # c and T alike
        grad2 = phi_x**2 + phi_y**2
        log_c = np.log(base)

        f_mass = []
        f3 = phi_t - lap
        for z in self.z:
            coef = 2.0 + z                # flux J = -(2 + z) (phi + offset) grad phi
            div_j = -coef * (grad2 + base * lap)
            f_mass.append(phi_t + div_j)
            j_dot_gc = -coef * base * grad2          # J . grad c
            div_j_logc = log_c * div_j + j_dot_gc / base
            f3 = f3 - (base * (div_j_logc + (1.0 + log_c) * phi_t)
                       + coef**2 * base * grad2)     # |J|^2 / c
        rho = -lap                                   # c1 - c2 cancels exactly
        return f_mass[0], f_mass[1], f3, rho

    # -- adapters onto a mesh ---------------------------------------------------

    def initial_state(self, mesh: Mesh) -> State:
        x, y = mesh.centers[:, 0], mesh.centers[:, 1]
        c1, c2, temp, _ = self.fields(0.0, x, y)
        params = self.params()
        psi = initial_potential(mesh, np.stack([c1, c2]), params,
                                self.boundary_data(mesh)(0.0),
                                rho=self.sources(0.0, x, y)[3])
        return State(t=0.0, c=np.stack([c1, c2]), psi=psi, temp=temp, mesh=mesh)

    def boundary_data(self, mesh: Mesh):
        """Potential boundary provider: exact Dirichlet on x-faces (evaluated
        at edge midpoints), homogeneous Neumann on y-faces."""
        bx, by = mesh.bnd_mid[:, 0], mesh.bnd_mid[:, 1]

        def bc(t: float) -> BoundaryData:
            psi = self._mode(t, bx, by)[0]
            return BoundaryData.mixed(mesh, dirichlet=psi,
                                      neumann=np.zeros(mesh.n_boundary))
        return bc

    def source_terms(self, mesh: Mesh) -> SourceTerms:
        x, y = mesh.centers[:, 0], mesh.centers[:, 1]
        return SourceTerms(
            mass=lambda t: np.stack(self.sources(t, x, y)[:2]),
            heat=lambda t: self.sources(t, x, y)[2],
            fixed_charge=lambda t: self.sources(t, x, y)[3])

    def errors(self, state: State):
        """Discrete l2 errors of (c1, c2, psi, T) against the exact fields."""
        mesh = state.mesh
        x, y = mesh.centers[:, 0], mesh.centers[:, 1]
        c1, c2, temp, psi = self.fields(state.t, x, y)
        def l2(diff):
            return float(np.sqrt(np.sum(mesh.vol * diff**2)))
        return (l2(state.c[0] - c1), l2(state.c[1] - c2),
                l2(state.psi - psi), l2(state.temp - temp))


@dataclass
class ConvergenceRow:
    h: float
    dt: float
    err_c1: float
    err_c2: float
    err_psi: float
    err_temp: float
    ord_c1: float | None = None
    ord_c2: float | None = None
    ord_psi: float | None = None
    ord_temp: float | None = None


def default_dt(scheme: str, h: float) -> float:
    """Accuracy-test step-size rules: dt = h^2 (first order in time buys a
    matched h^2 total) and dt = h/10 (second order in time)."""
    return h * h if scheme == "1" else h / 10.0


def run_single_level(scheme: str, n: int, t_end: float = 0.1,
                     dt_nominal: float | None = None,
                     newton_tol: float = 1e-10):
    """March the manufactured problem on an n x n grid to t_end.

    The nominal step is rounded so an integer number of steps lands exactly
    on t_end.  Returns (final State, ConvergenceRow without orders).
    """
    ms = ManufacturedSolution()
    h = 1.0 / n
    dt_nominal = dt_nominal if dt_nominal is not None else default_dt(scheme, h)
    steps = max(1, round(t_end / dt_nominal))
    dt = t_end / steps

    mesh = build_uniform_grid(GeometrySpec(nx=n, ny=n))
    params = ms.params()
    cfg = NewtonConfig(tol=newton_tol)
    sources = ms.source_terms(mesh)
    bc = ms.boundary_data(mesh)
    state = ms.initial_state(mesh)

    if scheme == "1":
        stepper = SemiImplicitStepper(mesh, params, cfg, sources)
        for _ in range(steps):
            state, _ = stepper.step(state, bc, dt)
    elif scheme == "2":
        stepper = LogMidpointStepper(mesh, params, cfg, sources)
        log_state = state.to_log()
        for _ in range(steps):
            log_state, report = stepper.step(log_state, bc, dt)
            if report.fallback_used:
                raise RuntimeError("accuracy run must not take the fallback path")
        state = log_state.to_state()
    else:
        raise ValueError(f"unknown scheme {scheme!r}")

    err = ms.errors(state)
    return state, ConvergenceRow(h=h, dt=dt, err_c1=err[0], err_c2=err[1],
                                 err_psi=err[2], err_temp=err[3])


def run_convergence_study(scheme: str, sizes=(8, 16, 32, 64), t_end: float = 0.1,
                          newton_tol: float = 1e-10):
    """Errors and observed orders over a refinement sequence."""
    rows: list[ConvergenceRow] = []
    for n in sizes:
        _, row = run_single_level(scheme, n, t_end=t_end, newton_tol=newton_tol)
        if rows:
            prev = rows[-1]
            row.ord_c1 = float(np.log2(prev.err_c1 / row.err_c1))
            row.ord_c2 = float(np.log2(prev.err_c2 / row.err_c2))
            row.ord_psi = float(np.log2(prev.err_psi / row.err_psi))
            row.ord_temp = float(np.log2(prev.err_temp / row.err_temp))
        rows.append(row)
    return rows


def convergence_csv(rows) -> str:
    out = io.StringIO()
    out.write("h,dt,err_c1,err_c2,err_psi,err_T,ord_c1,ord_c2,ord_psi,ord_T\n")
    for r in rows:
        ords = ",".join("" if o is None else f"{o:.6f}"
                        for o in (r.ord_c1, r.ord_c2, r.ord_psi, r.ord_temp))
        out.write(f"{r.h:.16e},{r.dt:.16e},{r.err_c1:.16e},{r.err_c2:.16e},"
                  f"{r.err_psi:.16e},{r.err_temp:.16e},{ords}\n")
    return out.getvalue()
