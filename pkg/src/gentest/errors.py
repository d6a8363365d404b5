"""Exception hierarchy shared by every module."""


class GentestError(Exception):
    """Base class for all library errors."""


class InvalidInputError(GentestError, ValueError):
    pass


class NotPSDError(GentestError, ValueError):
    pass


class NotPositiveDefiniteError(GentestError, ValueError):
    pass


class PoolExhaustedError(GentestError, ValueError):
    pass


class DensityUnavailableError(GentestError):
    """Raised when a log-density is requested for a source that has none."""


class InvalidEpsilonError(GentestError, ValueError):
    pass


class DegenerateBandwidthError(GentestError, ValueError):
    pass


class NumericError(GentestError, ArithmeticError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SolverError(GentestError):
    def __init__(self, message, grad_norm=None, iterations=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.iterations = iterations


class InsufficientTestsError(GentestError, ValueError):
    pass


class FingerprintMismatchError(GentestError):
    pass


class UnsupportedDeformationError(GentestError):
    pass


class BisectionError(GentestError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class TaskFailedError(GentestError):
    """A repeated evaluation failed; ``seed`` identifies the failing task stream."""

    def __init__(self, message, seed=None):
        super().__init__(message)
        self.seed = seed
