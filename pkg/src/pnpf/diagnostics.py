"""Measured quantities: discrete entropy and its split, entropy-production
lower bounds, totals and minima, cross-section current, CSV emission.

All computations are read-only over a state or a completed step report; CSV
columns are part of the external contract consumed by the plotting frontend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonpositiveState, SectionMissesMesh
from .mesh import Mesh
from .model import ModelParams, State


@dataclass
class DiagnosticsRecord:
    time: float
    entropy: float              # S = S1 + S2
    entropy_temp: float         # S1, temperature share
    entropy_ions: float         # S2, ionic share
    masses: np.ndarray          # (M,) per-species totals
    min_c: float
    min_temp: float
    max_temp: float
    mean_dtemp: float           # volume-weighted mean(T) - 1
    production: float           # scheme-specific entropy-production bound R
    current: float              # bulk section current I / I0


def discrete_entropy(state: State, params: ModelParams):
    """(S, S1, S2): S1 = <C_T (log T + 1), 1>, S2 = -sum_l <c_l, log c_l>."""
    if np.any(state.c <= 0) or np.any(state.temp <= 0):
        raise NonpositiveState("entropy needs positive concentrations and temperature")
    vol = state.mesh.vol
    s1 = params.c_t * float(np.sum(vol * (np.log(state.temp) + 1.0)))
    s2 = -float(np.sum(vol * np.sum(state.c * np.log(state.c), axis=0)))
    return s1 + s2, s1, s2


def entropy_production_semi_implicit(mesh: Mesh, params: ModelParams,
                                     c_new, uhat, temp_new) -> float:
    """Entropy-production bound of the semi-implicit step:
    eps sum_l <nu_l c_l |uhat_l|^2, 1/T> - k sum_sigma tau DT D(1/T) >= 0."""
    speed2 = np.sum(uhat**2, axis=2)
    diss = params.eps * float(np.sum(
        mesh.vol * np.einsum("l,ln->n", params.nu, np.atleast_2d(c_new) * speed2)
        / temp_new))
    d_t = temp_new[mesh.int_j] - temp_new[mesh.int_i]
    d_inv = 1.0 / temp_new[mesh.int_j] - 1.0 / temp_new[mesh.int_i]
    conduction = -params.k * float(np.sum(mesh.int_tau * d_t * d_inv))
    return diss + conduction


def entropy_production_log_midpoint(mesh: Mesh, params: ModelParams, g_mid,
                                    ucheck, r_aux, log_r, s_mid_edge) -> float:
    """Entropy-production bound of the log-variable midpoint step:
    eps sum_l <nu_l e^{eta_mid} |u_l|^2, R> + k [e^{xi_mid} grad log R, grad R].

    ``s_mid_edge`` holds the harmonic edge averages of e^{xi_mid} on interior
    edges; log R and R are co-monotone so the conduction sum is nonnegative.
    """
    speed2 = np.sum(ucheck**2, axis=2)
    diss = params.eps * float(np.sum(
        mesh.vol * np.einsum("l,ln->n", params.nu, g_mid * speed2) * r_aux))
    d_log_r = log_r[mesh.int_j] - log_r[mesh.int_i]
    d_r = r_aux[mesh.int_j] - r_aux[mesh.int_i]
    conduction = params.k * float(np.sum(mesh.int_tau * s_mid_edge * d_log_r * d_r))
    return diss + conduction


def entropy_production_bound(report) -> float:
    """R >= 0 for a completed step, as stored by the scheme that produced it."""
    return float(report.entropy_production)


def section_current(mesh: Mesh, fluxes, z, x0: float) -> float:
    """Signed ionic charge flux through the vertical line x = x0.

    Uses the scheme's own oriented edge fluxes, so the measurement is exactly
    consistent with the mass update of the step that produced them.
    """
    xi = mesh.centers[mesh.int_i, 0]
    xj = mesh.centers[mesh.int_j, 0]
    crossing = (xi - x0) * (xj - x0) < 0.0
    if not np.any(crossing):
        raise SectionMissesMesh(f"no interior edge crosses x = {x0}")
    direction = np.sign(mesh.int_normal[crossing, 0])
    fluxes = np.atleast_2d(fluxes)
    z = np.asarray(z, dtype=float)
    per_species = np.sum(mesh.int_m[crossing] * fluxes[:, crossing] * direction,
                         axis=1)
    return float(np.dot(z, per_species))


def make_record(state: State, params: ModelParams, production: float,
                current: float) -> DiagnosticsRecord:
    s, s1, s2 = discrete_entropy(state, params)
    vol = state.mesh.vol
    return DiagnosticsRecord(
        time=state.t, entropy=s, entropy_temp=s1, entropy_ions=s2,
        masses=np.sum(vol * state.c, axis=1),
        min_c=float(np.min(state.c)), min_temp=float(np.min(state.temp)),
        max_temp=float(np.max(state.temp)),
        mean_dtemp=float(np.sum(vol * state.temp) / np.sum(vol) - 1.0),
        production=production, current=current)


# -- CSV emission -----------------------------------------------------------

def timeseries_header(n_species: int) -> str:
    masses = ",".join(f"mass_{ell + 1}" for ell in range(n_species))
    return f"t,S,S1,S2,{masses},min_c,min_T,mean_dT,R,I"


def timeseries_row(rec: DiagnosticsRecord) -> str:
    masses = ",".join(f"{m:.16e}" for m in rec.masses)
    return (f"{rec.time:.16e},{rec.entropy:.16e},{rec.entropy_temp:.16e},"
            f"{rec.entropy_ions:.16e},{masses},{rec.min_c:.16e},"
            f"{rec.min_temp:.16e},{rec.mean_dtemp:.16e},{rec.production:.16e},"
            f"{rec.current:.16e}")


def write_timeseries(path, records, n_species: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(timeseries_header(n_species) + "\n")
        for rec in records:
            fh.write(timeseries_row(rec) + "\n")


def write_snapshot(path, state: State) -> None:
    """Field snapshot: one row per volume with coordinates and all fields."""
    mesh = state.mesh
    cols = ",".join(f"c{ell + 1}" for ell in range(state.n_species))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"index,x,y,{cols},psi,T\n")
        for i in range(mesh.n_volumes):
            cs = ",".join(f"{state.c[ell, i]:.16e}" for ell in range(state.n_species))
            fh.write(f"{i},{mesh.centers[i, 0]:.16e},{mesh.centers[i, 1]:.16e},"
                     f"{cs},{state.psi[i]:.16e},{state.temp[i]:.16e}\n")
