"""Exception types shared across the package."""


class ScfemError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolationError(ScfemError, ValueError):
    """An argument violated a documented precondition."""


class InvalidLevelError(ContractViolationError):
    """A one-based level argument was smaller than one."""


class UnknownDomainError(ContractViolationError):
    """A domain tag did not name a supported computational domain."""


class IncompatibleMeshError(ContractViolationError):
    """Two meshes that must share a common root triangulation do not."""


class CoercivityError(ScfemError):
    """A diffusion coefficient failed to be strictly positive at a sample point."""


class SolverFailureError(ScfemError):
    """The iterative linear solver did not reach its tolerance.

    Carries the relative residual history of the failed run.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


class CannotEnrichError(ScfemError):
    """Parametric enrichment was requested but no admissible index exists."""


class MeshInitFailureError(ScfemError):
    """Per-point mesh initialization did not meet its target within its cap.

    Carries the per-round record of indicator values for diagnosis.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class ConfigError(ScfemError, ValueError):
    """A run configuration failed validation."""
