"""Exception hierarchy for the solver.

Errors are grouped by the subsystem that raises them; everything derives from
:class:`PnpfError` so callers can catch broadly at the CLI boundary.
"""


class PnpfError(Exception):
    """Base class for all solver errors."""


# -- mesh construction --------------------------------------------------------

class ZeroResolution(PnpfError):
    """Grid resolution below the minimum (nx or ny < 2)."""


class DegenerateGeometry(PnpfError):
    """Electrode carving produced an invalid or disconnected fluid domain."""


# -- discrete operators --------------------------------------------------------

class DivisionDegenerate(PnpfError):
    """Harmonic average of two zero values."""


class MissingBoundaryData(PnpfError):
    """An exterior edge has no boundary value of the required kind."""


class MeshMismatch(PnpfError):
    """Two grid functions live on different meshes."""


class AntisymmetryViolation(PnpfError):
    """Per-(volume, edge) flux input is not antisymmetric on interior edges."""


# -- linear algebra -----------------------------------------------------------

class AllNeumann(PnpfError):
    """Poisson system has no Dirichlet edge; the matrix is singular."""


class SingularMatrix(PnpfError):
    """Factorization failed."""


class NotConverged(PnpfError):
    """Iterative solver ran out of iterations."""

    def __init__(self, iterations, residual):
        super().__init__(
            f"linear solver not converged after {iterations} iterations "
            f"(residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


# -- nonlinear solves / time stepping ------------------------------------------

class NonpositiveConcentration(PnpfError):
    """A concentration value is <= 0 where positivity is required."""


class NonpositiveState(PnpfError):
    """State holds a nonpositive concentration or temperature."""


class NewtonDiverged(PnpfError):
    """Newton iteration hit the iteration cap without converging."""

    def __init__(self, iterations, residual):
        super().__init__(
            f"Newton diverged: residual {residual:.3e} after {iterations} iterations")
        self.iterations = iterations
        self.residual = residual


class PositivityLineSearchFailed(PnpfError):
    """Step halving could not restore positivity of the Newton iterate."""


class TimestepTooLarge(PnpfError):
    """dt violates the M-matrix condition dt < C_T / ||P||_inf."""

    def __init__(self, dt, dt_max):
        super().__init__(f"dt={dt:.3e} exceeds temperature stability bound {dt_max:.3e}")
        self.dt = dt
        self.dt_max = dt_max


class PositivityLost(PnpfError):
    """Post-solve check found a nonpositive value; indicates a solver bug."""


# -- diagnostics / experiments --------------------------------------------------

class SectionMissesMesh(PnpfError):
    """Requested cross-section line crosses no interior edge."""


class NonpositiveConstant(PnpfError):
    """A physical constant that must be positive is not."""


class ConfigError(PnpfError):
    """Invalid or unknown configuration content."""


class StructureViolation(PnpfError):
    """A run-time structure check (mass, positivity, entropy) failed."""
