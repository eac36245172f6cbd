"""Exception hierarchy.

Validation-type errors map to CLI exit code 1, numerical failures to exit
code 2.
"""


class DTSMError(Exception):
    """Base class for all package errors."""


class ValidationError(DTSMError):
    """Bad inputs: data, configuration or parameter preconditions."""


class NumericalError(DTSMError):
    """A numerical procedure failed (factorization, optimizer, degeneracy)."""


class DomainError(ValidationError):
    pass


class IdentificationError(ValidationError):
    """Eigenvalues of the risk-neutral feedback matrix are not distinct."""


class DataError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DegeneratePanelError(ValidationError):
    pass


class KnifeEdgeRotationError(NumericalError):
    """``W B_X`` is (numerically) singular, so the PC rotation is undefined."""


class ConditioningError(NumericalError):
    """Factorization failed even after jitter."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class DegeneracyError(NumericalError):
    """All importance weights vanished."""


class OptimizationError(NumericalError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []
