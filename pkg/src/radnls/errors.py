"""Exception hierarchy shared by every module."""


class RadNLSError(Exception):
    """Base class for all package errors."""


class ParameterError(RadNLSError, ValueError):
    """An argument is outside its admissible range."""


class DataError(RadNLSError, ValueError):
    """A field contains non-finite samples or is otherwise malformed."""


class ConfigurationError(RadNLSError, ValueError):
    """An experiment setup cannot produce meaningful output (e.g. the wave hits the wall)."""


class DegenerateInputError(RadNLSError, ValueError):
    """Input carries no information for the requested fit (zero field, underflowed tail)."""


class NumericalError(RadNLSError, RuntimeError):
    """A numerical kernel failed (eigensolver, quadrature)."""


class SingularityError(NumericalError):
    """Shift lands on (or within tolerance of) an eigenvalue."""


class SolverError(NumericalError):
    """Iterative solver did not converge."""

    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class BracketingError(NumericalError):
    """Shooting bracket does not enclose a classification change."""


class BlowUpError(NumericalError):
    """Non-finite samples appeared during time stepping."""

    def __init__(self, message: str, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class ConsistencyError(RadNLSError):
    """Output bookkeeping disagrees with files on disk."""


class DegenerateInputWarning(RuntimeWarning):
    """Part of the input is unusable (e.g. an underflowed tail); results use what remains."""
