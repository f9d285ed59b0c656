"""Second-order time step in logarithmic variables (modified midpoint rule).

Working variables are eta = log c and xi = log T, so positivity of the
primitive fields is structural.  The midpoint flux law carries correction
factors Q (per species) and R (temperature) built from exponential Taylor
remainders; they make the discrete entropy increase exactly while keeping
second-order accuracy.  One step is a fully coupled Newton solve over
(eta^1..eta^M, psi, xi) per volume, with an analytic one-ring Jacobian.

If Newton fails to converge, the step falls back to two half steps of the
first-order scheme and flags the event.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diagnostics import entropy_production_log_midpoint
from .errors import NewtonDiverged
from .fields import BoundaryData
from .linsys import assemble_poisson, factorize
from .mesh import Mesh
from .model import LogState, ModelParams, NewtonConfig, SourceTerms, resolve_bc
from .operators import harm_kernel, harm_kernel_partials

logger = logging.getLogger(__name__)

#: cap on a single Newton update of any log variable (exp-overflow guard)
_MAX_LOG_STEP = 4.0


@dataclass
class CNReport:
    """Auxiliaries of a completed log-midpoint step, for diagnostics."""

    scheme: str
    dt: float
    newton_iterations: int
    residual: float
    fluxes: np.ndarray            # (M, Ei) midpoint edge mass fluxes
    ucheck: np.ndarray            # (M, N, 3) midpoint velocity reconstruction
    coupling: np.ndarray          # (N,) midpoint coupling P
    r_aux: np.ndarray             # (N,) temperature correction factor R > 0
    g_mid: np.ndarray             # (M, N) e^{eta at midpoint}
    s_mid: np.ndarray             # (N,) e^{xi at midpoint}
    entropy_production: float
    fallback_used: bool = False


def concentration_correction(eta_old, eta_new):
    """Q = eta' - (a-b)/(2a) - (a-b)^2/(6a^2) with a = e^{eta'}, b = e^{eta}.

    Reduces to eta when nothing moved; satisfies the convexity inequality
    (Q+1)(a-b) >= a log a - b log b that drives the entropy balance.
    """
    a = np.exp(eta_new)
    u = a - np.exp(eta_old)
    return eta_new - u / (2.0 * a) - u * u / (6.0 * a * a)


def concentration_correction_slope(eta_old, eta_new):
    """dQ/d eta_new = 1/2 + u/(6a) + u^2/(3a^2)."""
    a = np.exp(eta_new)
    u = a - np.exp(eta_old)
    return 0.5 + u / (6.0 * a) + u * u / (3.0 * a * a)


def temperature_correction(xi_old, xi_new):
    """R = 1/T' + (T'-T)/(2T'^2) + (T'-T)^2/(3T'^3); strictly positive.

    Equals 1/T' when nothing moved; satisfies xi' - xi >= R (T' - T).
    """
    t_new = np.exp(xi_new)
    v = t_new - np.exp(xi_old)
    return 1.0 / t_new + v / (2.0 * t_new**2) + v * v / (3.0 * t_new**3)


def temperature_correction_slope(xi_old, xi_new):
    """dR/d xi_new = -1/(2T') - v/(3T'^2) - v^2/T'^3."""
    t_new = np.exp(xi_new)
    v = t_new - np.exp(xi_old)
    return -1.0 / (2.0 * t_new) - v / (3.0 * t_new**2) - v * v / t_new**3


def midpoint_fluxes(mesh: Mesh, old: LogState, new: LogState, params: ModelParams):
    """Oriented midpoint edge fluxes of every species; zero on boundary edges.

    nu_l F_sigma = -[ A(e^{eta_mid + xi_mid}) D Q
                      + A(e^{eta_mid}) D(z psi_mid + e^{xi_mid}) ] / d_sigma
    with pointwise geometric means e^{f_mid} = e^{(f_old + f_new)/2} and the
    arithmetic mean for psi.
    """
    i, j = mesh.int_i, mesh.int_j
    mi, mj = mesh.vol[i], mesh.vol[j]
    s = np.exp(0.5 * (old.xi + new.xi))
    psi_h = 0.5 * (old.psi + new.psi)
    fluxes = np.empty((params.n_species, mesh.n_interior))
    for ell in range(params.n_species):
        g = np.exp(0.5 * (old.eta[ell] + new.eta[ell]))
        w = g * s
        q = concentration_correction(old.eta[ell], new.eta[ell])
        phi = params.z[ell] * psi_h + s
        hw = harm_kernel(w[i], w[j], mi, mj)
        hg = harm_kernel(g[i], g[j], mi, mj)
        fluxes[ell] = -(hw * (q[j] - q[i]) + hg * (phi[j] - phi[i])) \
            / (params.nu[ell] * mesh.int_d)
    return fluxes


def _tilde_gradient_partials(mesh: Mesh, u):
    """Vertex-gradient reconstruction with its sparsity-structured partials.

    Returns (grad, self_p, cross_ij, cross_ji):
      grad[i]      = (grad~ u)_i                                   (N, 3)
      self_p[i]    = d (grad~ u)_i / d u_i                         (N, 3)
      cross_ij[e]  = d (grad~ u)_i / d u_j  for edge e = (i, j)    (Ei, 3)
      cross_ji[e]  = d (grad~ u)_j / d u_i                         (Ei, 3)
    """
    i, j = mesh.int_i, mesh.int_j
    vol = mesh.vol
    h, h_i, h_j = harm_kernel_partials(u[i], u[j], vol[i], vol[j])
    me = mesh.int_m

    grad = np.zeros((mesh.n_volumes, 3))
    np.add.at(grad, i, (me * h)[:, None] * mesh.int_normal)
    np.add.at(grad, j, -(me * h)[:, None] * mesh.int_normal)
    np.add.at(grad, mesh.bnd_vol,
              (mesh.bnd_m * u[mesh.bnd_vol])[:, None] * mesh.bnd_normal)
    grad /= vol[:, None]

    self_p = np.zeros((mesh.n_volumes, 3))
    np.add.at(self_p, i, (me * h_i)[:, None] * mesh.int_normal)
    np.add.at(self_p, j, -(me * h_j)[:, None] * mesh.int_normal)
    np.add.at(self_p, mesh.bnd_vol, mesh.bnd_m[:, None] * mesh.bnd_normal)
    self_p /= vol[:, None]

    cross_ij = (me * h_j)[:, None] * mesh.int_normal / vol[i, None]
    cross_ji = -(me * h_i)[:, None] * mesh.int_normal / vol[j, None]
    return grad, self_p, cross_ij, cross_ji


class MidpointSystem:
    """Frozen per-step nonlinear system for the log-variable midpoint scheme.

    Unknowns are interleaved per volume: (eta^1..eta^M, psi, xi), so the
    column of component ``c`` at volume ``i`` is ``i*(M+2) + c``.
    """

    def __init__(self, mesh: Mesh, params: ModelParams, state: LogState,
                 bc_psi: BoundaryData, dt: float, sources: SourceTerms | None = None):
        self.mesh = mesh
        self.params = params
        self.state = state
        self.dt = dt
        self.n = mesh.n_volumes
        self.m_sp = params.n_species
        self.n_comp = self.m_sp + 2

        self.b_conc = np.exp(state.eta)          # (M, N) old concentrations
        self.t_old = np.exp(state.xi)

        self.a_pois, self.b_pois = assemble_poisson(mesh, params.eps, bc_psi)
        self._pois_coo = self.a_pois.tocoo()

        self.rho = params.fixed_charge(mesh)
        self.f_mass = None
        self.f_heat = None
        if sources is not None:
            t_mid = state.t + dt / 2.0
            if sources.fixed_charge is not None:
                self.rho = sources.fixed_charge(state.t + dt)
            if sources.mass is not None:
                self.f_mass = sources.mass(t_mid)
            if sources.heat is not None:
                self.f_heat = sources.heat(t_mid)

    # -- packing --------------------------------------------------------------

    def col(self, vol_idx, comp):
        return vol_idx * self.n_comp + comp

    def pack(self, eta, psi, xi):
        x = np.empty(self.n * self.n_comp)
        for ell in range(self.m_sp):
            x[ell::self.n_comp] = eta[ell]
        x[self.m_sp::self.n_comp] = psi
        x[self.m_sp + 1::self.n_comp] = xi
        return x

    def unpack(self, x):
        eta = np.stack([x[ell::self.n_comp] for ell in range(self.m_sp)])
        return eta, x[self.m_sp::self.n_comp], x[self.m_sp + 1::self.n_comp]

    # -- evaluation -------------------------------------------------------------

    def evaluate(self, x):
        """Residual vector and the auxiliary bundle the Jacobian reuses."""
        mesh, params, dt = self.mesh, self.params, self.dt
        i, j = mesh.int_i, mesh.int_j
        mi, mj = mesh.vol[i], mesh.vol[j]
        eta, psi, xi = self.unpack(x)

        a = np.exp(eta)                              # new concentrations
        t_new = np.exp(xi)
        g = np.exp(0.5 * (self.state.eta + eta))     # (M, N)
        s = np.exp(0.5 * (self.state.xi + xi))       # (N,)
        psi_h = 0.5 * (self.state.psi + psi)
        q = np.stack([concentration_correction(self.state.eta[ell], eta[ell])
                      for ell in range(self.m_sp)])
        qp = np.stack([concentration_correction_slope(self.state.eta[ell], eta[ell])
                       for ell in range(self.m_sp)])
        r_aux = temperature_correction(self.state.xi, xi)
        rp = temperature_correction_slope(self.state.xi, xi)
        log_r = np.log(r_aux)

        aux = {"eta": eta, "psi": psi, "xi": xi, "a": a, "t_new": t_new,
               "g": g, "s": s, "psi_h": psi_h, "q": q, "qp": qp,
               "r_aux": r_aux, "rp": rp, "log_r": log_r}

        # edge quantities per species
        hw = np.empty((self.m_sp, mesh.n_interior, 3))   # value, d/dw_i, d/dw_j
        hg = np.empty((self.m_sp, mesh.n_interior, 3))
        dq = q[:, j] - q[:, i]
        fluxes = np.empty((self.m_sp, mesh.n_interior))
        dphi = np.empty((self.m_sp, mesh.n_interior))
        for ell in range(self.m_sp):
            w = g[ell] * s
            hw[ell] = np.stack(harm_kernel_partials(w[i], w[j], mi, mj), axis=1)
            hg[ell] = np.stack(harm_kernel_partials(g[ell, i], g[ell, j], mi, mj),
                               axis=1)
            phi = params.z[ell] * psi_h + s
            dphi[ell] = phi[j] - phi[i]
            fluxes[ell] = -(hw[ell, :, 0] * dq[ell] + hg[ell, :, 0] * dphi[ell]) \
                / (params.nu[ell] * mesh.int_d)
        aux.update(hw=hw, hg=hg, dq=dq, dphi=dphi, fluxes=fluxes)

        hs = np.stack(harm_kernel_partials(s[i], s[j], mi, mj), axis=1)
        d_log_r = log_r[j] - log_r[i]
        aux.update(hs=hs, d_log_r=d_log_r)

        # velocity reconstruction and its gradient partials per species
        gq_list, gphi_list = [], []
        ucheck = np.empty((self.m_sp, self.n, 3))
        for ell in range(self.m_sp):
            gq = _tilde_gradient_partials(mesh, q[ell])
            gphi = _tilde_gradient_partials(mesh, params.z[ell] * psi_h + s)
            gq_list.append(gq)
            gphi_list.append(gphi)
            ucheck[ell] = -(s[:, None] * gq[0] + gphi[0]) / params.nu[ell]
        aux.update(gq=gq_list, gphi=gphi_list, ucheck=ucheck)

        theta = params.eps * np.einsum(
            "l,ln->n", params.nu, g * np.sum(ucheck**2, axis=2))
        aux["theta"] = theta

        # coupling P: advected edge value of Q is the arithmetic mean, which
        # keeps the transported part telescoping exactly
        q_edge = 0.5 * (q[:, i] + q[:, j])
        p_coupling = np.zeros(self.n)
        for ell in range(self.m_sp):
            p_coupling += params.eps * _scatter_div(mesh, fluxes[ell] * q_edge[ell])
            p_coupling += (1.0 + q[ell]) * (a[ell] - self.b_conc[ell]) / dt
        aux["q_edge"] = q_edge
        aux["coupling"] = p_coupling

        # residual blocks
        r = np.empty(self.n * self.n_comp)
        for ell in range(self.m_sp):
            r_mass = (a[ell] - self.b_conc[ell]) / dt \
                + params.eps * _scatter_div(mesh, fluxes[ell])
            if self.f_mass is not None:
                r_mass = r_mass - self.f_mass[ell]
            r[ell::self.n_comp] = r_mass

        charge = np.einsum("l,ln->n", params.z, a)
        r[self.m_sp::self.n_comp] = (self.a_pois @ psi - self.b_pois) / mesh.vol \
            - charge - self.rho

        conduction = params.k * _scatter_div_tau(mesh, hs[:, 0] * d_log_r)
        r_temp = params.c_t * (t_new - self.t_old) / dt + conduction \
            - p_coupling / r_aux - theta
        if self.f_heat is not None:
            r_temp = r_temp - self.f_heat
        r[self.m_sp + 1::self.n_comp] = r_temp
        return r, aux

    # -- Jacobian ---------------------------------------------------------------

    def jacobian(self, x, aux=None):
        if aux is None:
            _, aux = self.evaluate(x)
        mesh, params, dt = self.mesh, self.params, self.dt
        n, m_sp, n_comp = self.n, self.m_sp, self.n_comp
        i, j = mesh.int_i, mesh.int_j
        vol_i, vol_j = mesh.vol[i], mesh.vol[j]
        me = mesh.int_m
        tau = mesh.int_tau
        diag = np.arange(n)
        c_psi, c_xi = m_sp, m_sp + 1

        a, g, s = aux["a"], aux["g"], aux["s"]
        q, qp = aux["q"], aux["qp"]
        r_aux, rp, log_r = aux["r_aux"], aux["rp"], aux["log_r"]
        hw, hg, hs = aux["hw"], aux["hg"], aux["hs"]
        dq, dphi, d_log_r = aux["dq"], aux["dphi"], aux["d_log_r"]
        fluxes, q_edge = aux["fluxes"], aux["q_edge"]
        ucheck, theta = aux["ucheck"], aux["theta"]
        t_new = aux["t_new"]

        rows, cols, vals = [], [], []

        def add(r_, c_, v_):
            rows.append(r_)
            cols.append(c_)
            vals.append(v_)

        # dF[ell]/d(var at endpoint): each (Ei,) array
        df = {}
        for ell in range(m_sp):
            nud = params.nu[ell] * mesh.int_d
            w_i, w_j = g[ell, i] * s[i], g[ell, j] * s[j]
            df[ell, "eta_i"] = -(hw[ell, :, 1] * (w_i / 2) * dq[ell]
                                 - hw[ell, :, 0] * qp[ell, i]
                                 + hg[ell, :, 1] * (g[ell, i] / 2) * dphi[ell]) / nud
            df[ell, "eta_j"] = -(hw[ell, :, 2] * (w_j / 2) * dq[ell]
                                 + hw[ell, :, 0] * qp[ell, j]
                                 + hg[ell, :, 2] * (g[ell, j] / 2) * dphi[ell]) / nud
            df[ell, "psi_i"] = hg[ell, :, 0] * (params.z[ell] / 2) / nud
            df[ell, "psi_j"] = -df[ell, "psi_i"]
            df[ell, "xi_i"] = -(hw[ell, :, 1] * (w_i / 2) * dq[ell]
                                - hg[ell, :, 0] * (s[i] / 2)) / nud
            df[ell, "xi_j"] = -(hw[ell, :, 2] * (w_j / 2) * dq[ell]
                                + hg[ell, :, 0] * (s[j] / 2)) / nud

        # -- mass rows ---------------------------------------------------------
        for ell in range(m_sp):
            add(self.col(diag, ell), self.col(diag, ell), a[ell] / dt)
            for var, comp in (("eta", ell), ("psi", c_psi), ("xi", c_xi)):
                d_i = params.eps * me * df[ell, f"{var}_i"]
                d_j = params.eps * me * df[ell, f"{var}_j"]
                add(self.col(i, ell), self.col(i, comp), d_i / vol_i)
                add(self.col(i, ell), self.col(j, comp), d_j / vol_i)
                add(self.col(j, ell), self.col(i, comp), -d_i / vol_j)
                add(self.col(j, ell), self.col(j, comp), -d_j / vol_j)

        # -- Poisson rows --------------------------------------------------------
        pr, pc = self._pois_coo.row, self._pois_coo.col
        add(self.col(pr, c_psi), self.col(pc, c_psi),
            self._pois_coo.data / mesh.vol[pr])
        for ell in range(m_sp):
            add(self.col(diag, c_psi), self.col(diag, ell), -params.z[ell] * a[ell])

        # -- temperature rows ----------------------------------------------------
        add(self.col(diag, c_xi), self.col(diag, c_xi), params.c_t * t_new / dt)

        # conduction k div(e^{xi_mid} grad log R): edge term tau * Hs * DlogR
        dcond_xi_i = tau * (hs[:, 1] * (s[i] / 2) * d_log_r
                            - hs[:, 0] * rp[i] / r_aux[i])
        dcond_xi_j = tau * (hs[:, 2] * (s[j] / 2) * d_log_r
                            + hs[:, 0] * rp[j] / r_aux[j])
        add(self.col(i, c_xi), self.col(i, c_xi), params.k * dcond_xi_i / vol_i)
        add(self.col(i, c_xi), self.col(j, c_xi), params.k * dcond_xi_j / vol_i)
        add(self.col(j, c_xi), self.col(i, c_xi), -params.k * dcond_xi_i / vol_j)
        add(self.col(j, c_xi), self.col(j, c_xi), -params.k * dcond_xi_j / vol_j)

        # -(P/R): build dP entries, scaled by -1/R at the row volume, plus the
        # quotient term +P R'/R^2 on the xi diagonal
        add(self.col(diag, c_xi), self.col(diag, c_xi),
            aux["coupling"] * rp / r_aux**2)
        inv_r = 1.0 / r_aux
        for ell in range(m_sp):
            # rate part, diagonal in eta
            d_rate = (qp[ell] * (a[ell] - self.b_conc[ell])
                      + (1.0 + q[ell]) * a[ell]) / dt
            add(self.col(diag, c_xi), self.col(diag, ell), -d_rate * inv_r)
            # transported part: d(F Qbar) per edge
            for var, comp in (("eta", ell), ("psi", c_psi), ("xi", c_xi)):
                t_i = df[ell, f"{var}_i"] * q_edge[ell]
                t_j = df[ell, f"{var}_j"] * q_edge[ell]
                if var == "eta":
                    t_i = t_i + fluxes[ell] * qp[ell, i] / 2
                    t_j = t_j + fluxes[ell] * qp[ell, j] / 2
                pe_i = params.eps * me * t_i
                pe_j = params.eps * me * t_j
                add(self.col(i, c_xi), self.col(i, comp), -pe_i / vol_i * inv_r[i])
                add(self.col(i, c_xi), self.col(j, comp), -pe_j / vol_i * inv_r[i])
                add(self.col(j, c_xi), self.col(i, comp), pe_i / vol_j * inv_r[j])
                add(self.col(j, c_xi), self.col(j, comp), pe_j / vol_j * inv_r[j])

        # -theta: chain through the velocity reconstruction
        for ell in range(m_sp):
            nu_l = params.nu[ell]
            en = params.eps * nu_l
            gq_grad, gq_self, gq_cij, gq_cji = aux["gq"][ell]
            gp_grad, gp_self, gp_cij, gp_cji = aux["gphi"][ell]
            u_l = ucheck[ell]
            two_gu = 2.0 * en * g[ell][:, None] * u_l            # (N, 3)

            # self entries (volume diagonal)
            du_eta_self = -(s[:, None] * gq_self) * qp[ell][:, None] / nu_l
            du_psi_self = -gp_self * (params.z[ell] / 2) / nu_l
            du_xi_self = -((s / 2)[:, None] * gq_grad
                           + gp_self * (s / 2)[:, None]) / nu_l
            d_theta_eta = en * (g[ell] / 2) * np.sum(u_l**2, axis=1) \
                + np.sum(two_gu * du_eta_self, axis=1)
            add(self.col(diag, c_xi), self.col(diag, ell), -d_theta_eta)
            add(self.col(diag, c_xi), self.col(diag, c_psi),
                -np.sum(two_gu * du_psi_self, axis=1))
            add(self.col(diag, c_xi), self.col(diag, c_xi),
                -np.sum(two_gu * du_xi_self, axis=1))

            # cross entries per interior edge: row i <- col j and row j <- col i
            du_i_eta_j = -(s[i, None] * gq_cij) * qp[ell][j, None] / nu_l
            du_j_eta_i = -(s[j, None] * gq_cji) * qp[ell][i, None] / nu_l
            du_i_psi_j = -gp_cij * (params.z[ell] / 2) / nu_l
            du_j_psi_i = -gp_cji * (params.z[ell] / 2) / nu_l
            du_i_xi_j = -gp_cij * (s[j, None] / 2) / nu_l
            du_j_xi_i = -gp_cji * (s[i, None] / 2) / nu_l
            add(self.col(i, c_xi), self.col(j, ell),
                -np.sum(two_gu[i] * du_i_eta_j, axis=1))
            add(self.col(j, c_xi), self.col(i, ell),
                -np.sum(two_gu[j] * du_j_eta_i, axis=1))
            add(self.col(i, c_xi), self.col(j, c_psi),
                -np.sum(two_gu[i] * du_i_psi_j, axis=1))
            add(self.col(j, c_xi), self.col(i, c_psi),
                -np.sum(two_gu[j] * du_j_psi_i, axis=1))
            add(self.col(i, c_xi), self.col(j, c_xi),
                -np.sum(two_gu[i] * du_i_xi_j, axis=1))
            add(self.col(j, c_xi), self.col(i, c_xi),
                -np.sum(two_gu[j] * du_j_xi_i, axis=1))

        size = n * n_comp
        return sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(size, size))

    # -- convergence ------------------------------------------------------------

    def block_norms(self, r):
        """(max mass+Poisson rows, max temperature rows)."""
        r_grid = r.reshape(self.n, self.n_comp)
        trans = float(np.max(np.abs(r_grid[:, :self.m_sp + 1])))
        temp = float(np.max(np.abs(r_grid[:, self.m_sp + 1])))
        return trans, temp


def _scatter_div(mesh: Mesh, edge_flux):
    mf = mesh.int_m * edge_flux
    acc = np.bincount(mesh.int_i, weights=mf, minlength=mesh.n_volumes)
    acc -= np.bincount(mesh.int_j, weights=mf, minlength=mesh.n_volumes)
    return acc / mesh.vol


def _scatter_div_tau(mesh: Mesh, edge_term):
    mf = mesh.int_tau * edge_term
    acc = np.bincount(mesh.int_i, weights=mf, minlength=mesh.n_volumes)
    acc -= np.bincount(mesh.int_j, weights=mf, minlength=mesh.n_volumes)
    return acc / mesh.vol


class LogMidpointStepper:
    """Driver for the second-order scheme with extrapolated initial guesses
    and a first-order fallback on Newton divergence."""

    def __init__(self, mesh: Mesh, params: ModelParams, cfg: NewtonConfig | None = None,
                 sources: SourceTerms | None = None):
        self.mesh = mesh
        self.params = params
        self.cfg = cfg or NewtonConfig()
        self.sources = sources
        self._prev: LogState | None = None
        self._fallback = None

    def newton_solve(self, state: LogState, bc_psi: BoundaryData, dt: float):
        cfg = self.cfg
        system = MidpointSystem(self.mesh, self.params, state, bc_psi, dt,
                                self.sources)
        if self._prev is not None and self._prev.t < state.t:
            # linear extrapolation from the two previous levels, scaled to dt
            w = dt / (state.t - self._prev.t)
            eta0 = state.eta + w * (state.eta - self._prev.eta)
            psi0 = state.psi + w * (state.psi - self._prev.psi)
            xi0 = state.xi + w * (state.xi - self._prev.xi)
        else:
            eta0, psi0, xi0 = state.eta, state.psi, state.xi
        x = system.pack(eta0, psi0, xi0)

        r, aux = system.evaluate(x)
        trans, temp = system.block_norms(r)
        iterations = 0
        while trans > cfg.tol or temp > cfg.temp_tol:
            if iterations >= cfg.max_iterations:
                raise NewtonDiverged(iterations, max(trans, temp))
            delta = factorize(system.jacobian(x, aux)).solve(-r)
            step_max = float(np.max(np.abs(delta)))
            lam = min(1.0, _MAX_LOG_STEP / step_max) if step_max > 0 else 1.0
            x = x + lam * delta
            r, aux = system.evaluate(x)
            trans, temp = system.block_norms(r)
            iterations += 1
        eta, psi, xi = system.unpack(x)
        new_state = LogState(t=state.t + dt, eta=eta, psi=psi, xi=xi,
                             mesh=self.mesh)
        return new_state, aux, iterations, max(trans, temp)

    def step(self, state: LogState, bc_psi, dt: float) -> tuple[LogState, CNReport]:
        bc = resolve_bc(bc_psi, state.t + dt)
        try:
            new_state, aux, iterations, res = self.newton_solve(state, bc, dt)
        except NewtonDiverged as exc:
            logger.warning("midpoint Newton diverged at t=%.6g (%s); "
                           "falling back to two first-order half steps",
                           state.t, exc)
            new_state, report = self._fallback_step(state, bc_psi, dt)
            self._prev = state
            return new_state, report

        s_mid_edge = harm_kernel(
            aux["s"][self.mesh.int_i], aux["s"][self.mesh.int_j],
            self.mesh.vol[self.mesh.int_i], self.mesh.vol[self.mesh.int_j])
        production = entropy_production_log_midpoint(
            self.mesh, self.params, aux["g"], aux["ucheck"], aux["r_aux"],
            aux["log_r"], s_mid_edge)
        report = CNReport(
            scheme="log-midpoint", dt=dt, newton_iterations=iterations,
            residual=res, fluxes=aux["fluxes"], ucheck=aux["ucheck"],
            coupling=aux["coupling"], r_aux=aux["r_aux"], g_mid=aux["g"],
            s_mid=aux["s"], entropy_production=production)
        self._prev = state
        return new_state, report

    def _fallback_step(self, state: LogState, bc_psi, dt: float):
        from .semi_implicit import SemiImplicitStepper
        if self._fallback is None:
            self._fallback = SemiImplicitStepper(self.mesh, self.params,
                                                 self.cfg, self.sources)
        half = state.to_state()
        half, rep1 = self._fallback.step(half, bc_psi, dt / 2)
        final, rep2 = self._fallback.step(half, bc_psi, dt - (half.t - state.t))
        report = CNReport(
            scheme="log-midpoint", dt=final.t - state.t,
            newton_iterations=rep1.newton_iterations + rep2.newton_iterations,
            residual=max(rep1.residual, rep2.residual),
            fluxes=rep2.fluxes, ucheck=rep2.uhat, coupling=rep2.coupling,
            r_aux=1.0 / final.temp, g_mid=final.c, s_mid=final.temp,
            entropy_production=min(rep1.entropy_production,
                                   rep2.entropy_production),
            fallback_used=True)
        return final.to_log(), report
