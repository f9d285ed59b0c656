"""First-order semi-implicit time step for the coupled transport system.

Each step solves the nonlinear concentration/potential block with a damped
Newton iteration (mobilities frozen at the previous level), then solves the
decoupled linear temperature equation.  The discretization conserves ionic
mass exactly, keeps concentrations positive through the logarithmic flux law,
and keeps temperature positive whenever the step-size guard
``dt < C_T / ||P||_inf`` holds, in which case the temperature matrix is an
M-matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diagnostics import entropy_production_semi_implicit
from .errors import (NewtonDiverged, NonpositiveConcentration,
                     PositivityLineSearchFailed, PositivityLost,
                     TimestepTooLarge)
from .fields import BoundaryData
from .linsys import assemble_poisson, factorize
from .mesh import Mesh
from .model import ModelParams, NewtonConfig, SourceTerms, State, resolve_bc
from .operators import harm_kernel


@dataclass
class StepReport:
    """Everything a completed semi-implicit step exposes for diagnostics."""

    scheme: str
    dt: float
    newton_iterations: int
    dt_halvings: int
    residual: float
    fluxes: np.ndarray          # (M, Ei) oriented edge mass fluxes c u . n
    uhat: np.ndarray            # (M, N, 3) reconstructed velocities
    coupling: np.ndarray        # (N,) coefficient P multiplying T^{n+1}
    dissipation: np.ndarray     # (N,) eps sum_l nu_l c_l |uhat_l|^2
    temp_new: np.ndarray        # (N,)
    entropy_production: float   # lower bound R >= 0 for the entropy increment
    fallback_used: bool = False


def mass_fluxes(mesh: Mesh, c_old, c_new, psi_new, temp_old, params: ModelParams):
    """Oriented edge fluxes (c u . n) of every species; zero on boundary edges.

    nu_l (c u)_sigma = -[ A_sigma(c^n) D(log c^{n+1} + z psi^{n+1})
                          + D(c^n (T^n - 1)) ] / d_sigma
    """
    c_new = np.atleast_2d(c_new)
    c_old = np.atleast_2d(c_old)
    if np.any(c_new <= 0):
        raise NonpositiveConcentration("flux evaluation needs positive concentrations")
    i, j = mesh.int_i, mesh.int_j
    mi, mj = mesh.vol[i], mesh.vol[j]
    d_psi = psi_new[j] - psi_new[i]
    fluxes = np.empty((params.n_species, mesh.n_interior))
    for ell in range(params.n_species):
        mob = harm_kernel(c_old[ell, i], c_old[ell, j], mi, mj)
        d_log = np.log(c_new[ell, j]) - np.log(c_new[ell, i])
        soret = c_old[ell] * (temp_old - 1.0)
        d_soret = soret[j] - soret[i]
        fluxes[ell] = -(mob * (d_log + params.z[ell] * d_psi) + d_soret) \
            / (params.nu[ell] * mesh.int_d)
    return fluxes


def _divergence(mesh: Mesh, edge_flux):
    """(1/m(V_i)) sum_sigma m(sigma) F_{i,sigma} with zero boundary flux."""
    mf = mesh.int_m * edge_flux
    acc = np.bincount(mesh.int_i, weights=mf, minlength=mesh.n_volumes)
    acc -= np.bincount(mesh.int_j, weights=mf, minlength=mesh.n_volumes)
    return acc / mesh.vol


def _tilde_gradient(mesh: Mesh, values):
    """Vertex gradient reconstruction on raw arrays (same formula as
    operators.tilde_gradient)."""
    interior = harm_kernel(values[mesh.int_i], values[mesh.int_j],
                           mesh.vol[mesh.int_i], mesh.vol[mesh.int_j])
    per_edge = np.concatenate([interior, interior, values[mesh.bnd_vol]])
    acc = np.zeros((mesh.n_volumes, 3))
    np.add.at(acc, mesh.inc_vol, (mesh.inc_m * per_edge)[:, None] * mesh.inc_normal)
    return acc / mesh.vol[:, None]


def reconstruct_velocities(mesh: Mesh, c_new, psi_new, temp_old, params: ModelParams):
    """Per-volume velocity u_hat: -(1/nu)[T^n grad~(log c) + grad~(z psi + T^n)]."""
    c_new = np.atleast_2d(c_new)
    if np.any(c_new <= 0):
        raise NonpositiveConcentration("velocity reconstruction needs positive c")
    uhat = np.empty((params.n_species, mesh.n_volumes, 3))
    for ell in range(params.n_species):
        g_log = _tilde_gradient(mesh, np.log(c_new[ell]))
        g_drift = _tilde_gradient(mesh, params.z[ell] * psi_new + temp_old)
        uhat[ell] = -(temp_old[:, None] * g_log + g_drift) / params.nu[ell]
    return uhat


def temperature_coupling(mesh: Mesh, c_old, c_new, fluxes, dt, params: ModelParams):
    """Coefficient P multiplying T^{n+1} in the heat balance.

    The advected edge value of log c is log of the harmonic average of the
    new concentrations, so the transport part telescopes to zero over the
    domain, which the discrete entropy balance requires exactly.
    """
    c_new = np.atleast_2d(c_new)
    c_old = np.atleast_2d(c_old)
    if np.any(c_new <= 0):
        raise NonpositiveConcentration("coupling term needs positive concentrations")
    i, j = mesh.int_i, mesh.int_j
    p = np.zeros(mesh.n_volumes)
    for ell in range(params.n_species):
        edge_log = np.log(harm_kernel(c_new[ell, i], c_new[ell, j],
                                      mesh.vol[i], mesh.vol[j]))
        p += params.eps * _divergence(mesh, fluxes[ell] * edge_log)
        p += (1.0 + np.log(c_new[ell])) * (c_new[ell] - c_old[ell]) / dt
    return p


class TransportSystem:
    """Frozen per-step nonlinear system for (c^{n+1}, psi^{n+1}).

    Unknown layout: x = [c^1 .. c^M, psi], each block of length N.  The
    residual is the pointwise (volume-averaged) form of the mass balances and
    the Poisson equation; the Jacobian is analytic and assembled edge by edge.
    """

    def __init__(self, mesh: Mesh, params: ModelParams, state: State,
                 bc_psi: BoundaryData, dt: float, sources: SourceTerms | None = None):
        self.mesh = mesh
        self.params = params
        self.state = state
        self.dt = dt
        self.n = mesh.n_volumes
        self.m_sp = params.n_species

        i, j = mesh.int_i, mesh.int_j
        self.mob = np.stack([
            harm_kernel(state.c[ell, i], state.c[ell, j], mesh.vol[i], mesh.vol[j])
            for ell in range(self.m_sp)])
        soret = state.c * (state.temp - 1.0)
        self.d_soret = soret[:, j] - soret[:, i]

        self.a_pois, self.b_pois = assemble_poisson(mesh, params.eps, bc_psi)
        self._pois_coo = self.a_pois.tocoo()

        t_new = state.t + dt
        self.rho = params.fixed_charge(mesh)
        self.f_mass = None
        if sources is not None:
            if sources.fixed_charge is not None:
                self.rho = sources.fixed_charge(t_new)
            if sources.mass is not None:
                self.f_mass = sources.mass(t_new)

    def pack(self, c, psi):
        return np.concatenate([np.ravel(c), psi])

    def unpack(self, x):
        m, n = self.m_sp, self.n
        return x[:m * n].reshape(m, n), x[m * n:]

    def fluxes(self, c, psi):
        mesh, params = self.mesh, self.params
        i, j = mesh.int_i, mesh.int_j
        d_psi = psi[j] - psi[i]
        logc = np.log(c)
        return -(self.mob * (logc[:, j] - logc[:, i] + params.z[:, None] * d_psi)
                 + self.d_soret) / (params.nu[:, None] * mesh.int_d)

    def residual(self, x):
        c, psi = self.unpack(x)
        if np.any(c <= 0):
            raise NonpositiveConcentration("residual evaluated at nonpositive c")
        mesh, params = self.mesh, self.params
        fluxes = self.fluxes(c, psi)
        r = np.empty((self.m_sp + 1) * self.n)
        for ell in range(self.m_sp):
            r_ell = (c[ell] - self.state.c[ell]) / self.dt \
                + params.eps * _divergence(mesh, fluxes[ell])
            if self.f_mass is not None:
                r_ell = r_ell - self.f_mass[ell]
            r[ell * self.n:(ell + 1) * self.n] = r_ell
        charge = np.einsum("l,ln->n", params.z, c)
        r[self.m_sp * self.n:] = (self.a_pois @ psi - self.b_pois) / mesh.vol \
            - charge - self.rho
        return r, fluxes

    def jacobian(self, x):
        c, _ = self.unpack(x)
        mesh, params = self.mesh, self.params
        n, m_sp = self.n, self.m_sp
        i, j = mesh.int_i, mesh.int_j
        vol_i, vol_j = mesh.vol[i], mesh.vol[j]
        diag = np.arange(n)
        rows, cols, vals = [], [], []
        for ell in range(m_sp):
            off = ell * n
            pref = params.eps * mesh.int_m / (params.nu[ell] * mesh.int_d)
            dfi = pref * self.mob[ell] / c[ell, i]    # d(m F)/dc_i
            dfj = -pref * self.mob[ell] / c[ell, j]   # d(m F)/dc_j
            dpi = pref * self.mob[ell] * params.z[ell]
            rows += [off + i, off + i, off + j, off + j,
                     off + i, off + i, off + j, off + j, off + diag]
            cols += [off + i, off + j, off + i, off + j,
                     m_sp * n + i, m_sp * n + j, m_sp * n + j, m_sp * n + i,
                     off + diag]
            vals += [dfi / vol_i, dfj / vol_i, -dfi / vol_j, -dfj / vol_j,
                     dpi / vol_i, -dpi / vol_i, dpi / vol_j, -dpi / vol_j,
                     np.full(n, 1.0 / self.dt)]
            rows.append(m_sp * n + diag)
            cols.append(off + diag)
            vals.append(np.full(n, -params.z[ell]))
        rows.append(m_sp * n + self._pois_coo.row)
        cols.append(m_sp * n + self._pois_coo.col)
        vals.append(self._pois_coo.data / mesh.vol[self._pois_coo.row])
        return sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=((m_sp + 1) * n, (m_sp + 1) * n))


class SemiImplicitStepper:
    """Stateful driver carrying cached assembly structures across steps."""

    def __init__(self, mesh: Mesh, params: ModelParams, cfg: NewtonConfig | None = None,
                 sources: SourceTerms | None = None):
        self.mesh = mesh
        self.params = params
        self.cfg = cfg or NewtonConfig()
        self.sources = sources
        self._heat_pattern = self._build_heat_pattern()

    # -- concentration / potential Newton solve ------------------------------

    def solve_transport_potential(self, state: State, bc_psi: BoundaryData, dt: float):
        """Damped Newton on the coupled concentration/potential block.

        Returns (c_new, psi_new, fluxes, iterations, residual_norm); the
        previous level seeds the iteration and trial steps halve until every
        concentration stays positive.
        """
        cfg = self.cfg
        system = TransportSystem(self.mesh, self.params, state, bc_psi, dt,
                                 self.sources)
        x = system.pack(state.c, state.psi)
        r, fluxes = system.residual(x)
        res_norm = float(np.max(np.abs(r)))
        iterations = 0
        while res_norm > cfg.tol:
            if iterations >= cfg.max_iterations:
                raise NewtonDiverged(iterations, res_norm)
            delta = factorize(system.jacobian(x)).solve(-r)
            lam = 1.0
            c_block = x[:system.m_sp * system.n]
            dc_block = delta[:system.m_sp * system.n]
            for _ in range(cfg.max_halvings):
                if np.all(c_block + lam * dc_block > 0):
                    break
                lam *= 0.5
            else:
                raise PositivityLineSearchFailed(
                    "no positive iterate within the halving budget")
            x = x + lam * delta
            r, fluxes = system.residual(x)
            res_norm = float(np.max(np.abs(r)))
            iterations += 1
        c_new, psi_new = system.unpack(x)
        return c_new, psi_new, fluxes, iterations, res_norm

    # -- temperature solve ----------------------------------------------------

    def _build_heat_pattern(self):
        """Static COO parts of the insulated Laplacian, row-scaled by 1/m(V)."""
        mesh = self.mesh
        i, j = mesh.int_i, mesh.int_j
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([i, j, j, i])
        tau = mesh.int_tau
        vals = np.concatenate([-tau / mesh.vol[i], -tau / mesh.vol[j],
                               tau / mesh.vol[i], tau / mesh.vol[j]])
        return rows, cols, vals

    def temperature_matrix(self, coupling, dt):
        """((C_T/dt) I - k Lap_h - diag(P)), insulated walls."""
        mesh, params = self.mesh, self.params
        rows, cols, lap_vals = self._heat_pattern
        n = mesh.n_volumes
        diag = np.arange(n)
        rows = np.concatenate([rows, diag])
        cols = np.concatenate([cols, diag])
        vals = np.concatenate([-params.k * lap_vals,
                               np.full(n, params.c_t / dt) - coupling])
        return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))

    def solve_temperature(self, temp_old, coupling, dissipation, dt, heat_source=None):
        """Implicit heat solve; raises TimestepTooLarge when the M-matrix
        condition dt < C_T/||P||_inf fails, PositivityLost if T^{n+1} is not
        strictly positive afterwards (a bug by the M-matrix argument)."""
        params = self.params
        p_max = float(np.max(np.abs(coupling))) if coupling.size else 0.0
        if p_max > 0 and dt >= params.c_t / p_max:
            raise TimestepTooLarge(dt, params.c_t / p_max)
        a = self.temperature_matrix(coupling, dt)
        rhs = params.c_t / dt * temp_old + dissipation
        if heat_source is not None:
            rhs = rhs + heat_source
        temp_new = factorize(a).solve(rhs)
        if np.any(temp_new <= 0):
            raise PositivityLost("temperature solve lost positivity")
        return temp_new

    # -- full step --------------------------------------------------------------

    def step(self, state: State, bc_psi, dt: float) -> tuple[State, StepReport]:
        """Advance one time level; halves dt on TimestepTooLarge when allowed."""
        params, cfg, mesh = self.params, self.cfg, self.mesh
        halvings = 0
        while True:
            bc = resolve_bc(bc_psi, state.t + dt)
            c_new, psi_new, fluxes, iters, res = \
                self.solve_transport_potential(state, bc, dt)
            uhat = reconstruct_velocities(mesh, c_new, psi_new, state.temp, params)
            coupling = temperature_coupling(mesh, state.c, c_new, fluxes, dt, params)
            speed2 = np.sum(uhat**2, axis=2)
            dissipation = params.eps * np.einsum("l,ln->n", params.nu, c_new * speed2)
            heat_src = None
            if self.sources is not None and self.sources.heat is not None:
                heat_src = self.sources.heat(state.t + dt)
            try:
                temp_new = self.solve_temperature(
                    state.temp, coupling, dissipation, dt, heat_src)
                break
            except TimestepTooLarge:
                if not cfg.auto_dt_halving or halvings >= cfg.max_dt_halvings:
                    raise
                dt *= 0.5
                halvings += 1

        new_state = State(t=state.t + dt, c=c_new, psi=psi_new, temp=temp_new,
                          mesh=mesh)
        r_bound = entropy_production_semi_implicit(mesh, params, c_new, uhat, temp_new)
        report = StepReport(
            scheme="semi-implicit", dt=dt, newton_iterations=iters,
            dt_halvings=halvings, residual=res, fluxes=fluxes, uhat=uhat,
            coupling=coupling, dissipation=dissipation, temp_new=temp_new,
            entropy_production=r_bound)
        return new_state, report


def initial_potential(mesh: Mesh, c, params: ModelParams, bc_psi: BoundaryData,
                      rho=None) -> np.ndarray:
    """Solve the discrete Poisson problem for a consistent initial potential."""
    a, b = assemble_poisson(mesh, params.eps, bc_psi)
    charge = np.einsum("l,ln->n", params.z, np.atleast_2d(c))
    if rho is None:
        rho = params.fixed_charge(mesh)
    return factorize(a).solve(b + mesh.vol * (charge + rho))
