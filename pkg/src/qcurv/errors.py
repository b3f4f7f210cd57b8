"""Exception hierarchy shared by all modules."""


class QCurvError(Exception):
    """Base class for library errors."""


class ConfigurationError(QCurvError, ValueError):
    """Invalid construction parameters or run configuration."""


class ValidationError(QCurvError, ValueError):
    """Input data violates a documented invariant."""


class PreconditionError(QCurvError):
    """An operation was called outside its mathematical hypotheses."""


class SpectralOnlyError(QCurvError):
    """A node-dependent operation was requested on a spectral-only object."""


class MeshIngestionError(QCurvError, ValueError):
    """Mesh file is malformed, open, or non-manifold."""


class NumericalError(QCurvError, ArithmeticError):
    """Solver or eigensolver failure; carries a diagnostic payload."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
