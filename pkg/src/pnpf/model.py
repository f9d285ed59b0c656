"""Solver state, model parameters, and nonlinear-solver settings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonpositiveState
from .fields import BoundaryData
from .mesh import Mesh


@dataclass
class ModelParams:
    """Dimensionless physical constants of the transport model.

    ``eps`` is the ratio of the screening length to the domain scale; ``k``
    and ``c_t`` are the rescaled thermal conductivity and heat capacity.
    ``rho_fixed`` is the static fixed-charge density per volume (scalar or
    per-volume array).
    """

    z: np.ndarray
    nu: np.ndarray
    eps: float
    k: float
    c_t: float
    rho_fixed: float | np.ndarray = 0.0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.z.shape != self.nu.shape:
            raise ValueError("valence and viscosity lists must have equal length")
        if np.any(self.nu <= 0) or self.eps <= 0 or self.k <= 0 or self.c_t <= 0:
            raise ValueError("nu, eps, k, c_t must be strictly positive")

    @property
    def n_species(self) -> int:
        return len(self.z)

    def fixed_charge(self, mesh: Mesh) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.rho_fixed, dtype=float),
                               (mesh.n_volumes,)).copy()


@dataclass
class State:
    """Primitive solver state at one time level: concentrations, potential,
    temperature.  Concentrations and temperature must be strictly positive."""

    t: float
    c: np.ndarray          # (M, N)
    psi: np.ndarray        # (N,)
    temp: np.ndarray       # (N,)
    mesh: Mesh

    def __post_init__(self):
        self.c = np.atleast_2d(np.asarray(self.c, dtype=float))
        self.psi = np.asarray(self.psi, dtype=float)
        self.temp = np.asarray(self.temp, dtype=float)
        n = self.mesh.n_volumes
        if self.c.shape[1] != n or self.psi.shape != (n,) or self.temp.shape != (n,):
            raise ValueError("state arrays do not match the mesh")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.psi))
                and np.all(np.isfinite(self.temp))):
            raise NonpositiveState("state holds non-finite values")
        if np.any(self.c <= 0) or np.any(self.temp <= 0):
            raise NonpositiveState("concentrations and temperature must be positive")

    @property
    def n_species(self) -> int:
        return self.c.shape[0]

    def to_log(self) -> "LogState":
        return LogState(t=self.t, eta=np.log(self.c), psi=self.psi.copy(),
                        xi=np.log(self.temp), mesh=self.mesh)


@dataclass
class LogState:
    """State in logarithmic working variables: eta = log c, xi = log T.

    Positivity of concentrations and temperature is structural here; the
    entries only need to be finite.
    """

    t: float
    eta: np.ndarray        # (M, N)
    psi: np.ndarray        # (N,)
    xi: np.ndarray         # (N,)
    mesh: Mesh

    def __post_init__(self):
        self.eta = np.atleast_2d(np.asarray(self.eta, dtype=float))
        self.psi = np.asarray(self.psi, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        if not (np.all(np.isfinite(self.eta)) and np.all(np.isfinite(self.psi))
                and np.all(np.isfinite(self.xi))):
            raise NonpositiveState("log state holds non-finite values")

    @property
    def n_species(self) -> int:
        return self.eta.shape[0]

    def to_state(self) -> State:
        return State(t=self.t, c=np.exp(self.eta), psi=self.psi.copy(),
                     temp=np.exp(self.xi), mesh=self.mesh)


@dataclass
class NewtonConfig:
    """Damped-Newton settings shared by both schemes.

    ``tol`` bounds the max-norm of the nonlinear residual.  The temperature
    rows of the fully coupled scheme carry a conduction term whose floating
    point floor can exceed ``tol`` on stiff configurations, so they may get
    their own bound via ``tol_temperature`` (defaults to ``tol``).
    """

    tol: float = 1e-10
    tol_temperature: float | None = None
    max_iterations: int = 50
    max_halvings: int = 30
    auto_dt_halving: bool = True
    max_dt_halvings: int = 10

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("Newton tolerance must be positive")

    @property
    def temp_tol(self) -> float:
        return self.tol if self.tol_temperature is None else self.tol_temperature


@dataclass
class SourceTerms:
    """Optional manufactured right-hand sides, evaluated at volume centers.

    ``mass(t) -> (M, N)``, ``heat(t) -> (N,)``, ``fixed_charge(t) -> (N,)``;
    a None entry means zero (and the static model fixed charge for the
    charge density).
    """

    mass: Callable[[float], np.ndarray] | None = None
    heat: Callable[[float], np.ndarray] | None = None
    fixed_charge: Callable[[float], np.ndarray] | None = None


BcProvider = Callable[[float], BoundaryData]


def resolve_bc(bc, t: float) -> BoundaryData:
    """Accept either fixed BoundaryData or a callable of time."""
    return bc(t) if callable(bc) else bc
