"""Exception types shared across the package."""


class TensorMtlError(Exception):
    """Base class for all package-specific errors."""


class InvalidIndexError(TensorMtlError, IndexError):
    """A task index (flat or per-mode) is out of range."""


class UnsupportedKernelError(TensorMtlError):
    """The requested operation needs a kernel kind it does not support."""


class IllPosedProblemError(TensorMtlError):
    """The quadratic term failed a positive-semidefiniteness check."""


class ConvergenceError(TensorMtlError):
    """Iteration budget exhausted before reaching tolerance.

    Carries the best iterate and its residual so callers can inspect or
    resume from it.
    """

    def __init__(self, message, best_x=None, residual=None):
        super().__init__(message)
        self.best_x = best_x
        self.residual = residual


class FactorizationError(TensorMtlError):
    """Cholesky factorization hit a non-positive (or too small) pivot."""

    def __init__(self, message, pivot_index=None):
        super().__init__(message)
        self.pivot_index = pivot_index


class DegenerateConstraintsError(TensorMtlError):
    """The constraint block of a saddle system is rank deficient."""


class EmptyTaskError(TensorMtlError):
    """A task has no samples where at least one is required."""


class DatasetFormatError(TensorMtlError):
    """A dataset or predictions file violates the CSV contract.

    ``line`` is the 1-based physical line number when applicable.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(TensorMtlError):
    """Training aborted; carries the convergence trace collected so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
