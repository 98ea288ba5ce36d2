"""Exception types raised across the package."""


class FloquetIFError(Exception):
    """Base class for all package errors."""


class DimensionError(FloquetIFError, ValueError):
    pass


class InputError(FloquetIFError, ValueError):
    pass


class DomainError(FloquetIFError, ValueError):
    pass


class ConvergenceError(FloquetIFError, RuntimeError):
    def __init__(self, message, iterations=None, achieved=None):
        super().__init__(message)
        self.iterations = iterations
        self.achieved = achieved


class QuadratureError(ConvergenceError):
    pass


class FitQualityError(FloquetIFError, RuntimeError):
    def __init__(self, message, error=None):
        super().__init__(message)
        self.error = error


class ResourceError(FloquetIFError, MemoryError):
    pass


class ConsistencyError(FloquetIFError, RuntimeError):
    pass


class DegenerateSteadyStateError(FloquetIFError, RuntimeError):
    """Several eigenvalues of modulus ~1; the candidate vectors are attached."""

    def __init__(self, message, eigenvalues=None, eigenvectors=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors


class MemoryTimeError(FloquetIFError, RuntimeError):
    def __init__(self, message, tau_max=None, residual=None):
        super().__init__(message)
        self.tau_max = tau_max
        self.residual = residual


class StepSizeError(FloquetIFError, RuntimeError):
    pass


class UnsupportedConfigurationError(FloquetIFError, ValueError):
    pass
