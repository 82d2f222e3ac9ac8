"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, solver failures with 3 and geometry failures with 4.
"""


class StflowError(Exception):
    """Base class for all package errors."""


class ConfigError(StflowError):
    """Malformed configuration, unknown case names, invalid option combinations."""


class MeshError(StflowError):
    """Invalid spatial mesh input (bad indices, unmarked boundary, junk lines)."""


class GeometryError(StflowError):
    """Degenerate or inverted space-time geometry (non-positive cell volumes)."""


class QuadratureError(StflowError):
    """Requested quadrature degree outside the implemented table."""


class SolverError(StflowError):
    """Linear algebra failures: singular local or global systems."""


class NonConvergenceError(SolverError):
    """Picard iteration hit the iteration cap or produced non-finite values."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []
