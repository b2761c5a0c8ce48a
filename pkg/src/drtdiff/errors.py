"""Exception hierarchy shared by every module of the package."""


class DrtDiffError(Exception):
    """Base class for all package errors."""


class ContractViolation(DrtDiffError, ValueError):
    """An input does not satisfy an operation's precondition (shape, symmetry, ...)."""


class InvalidSizeError(ContractViolation):
    pass


class ConnectivityError(DrtDiffError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class ToleranceError(DrtDiffError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class NumericalFailure(DrtDiffError, FloatingPointError):
    pass


class SingularityError(NumericalFailure):
    pass


class DegenerateInputError(ContractViolation):
    pass


class DataAvailabilityError(DrtDiffError, LookupError):
    pass


class PartitionInfeasible(DrtDiffError, ValueError):
    pass


class ConfigError(DrtDiffError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
