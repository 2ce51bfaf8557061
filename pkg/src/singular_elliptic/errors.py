"""Exception hierarchy shared by all modules."""


class SingularEllipticError(Exception):
    """Base class for every error raised by this package."""


class InvalidDomainError(SingularEllipticError, ValueError):
    pass


class InvalidResolutionError(SingularEllipticError, ValueError):
    pass


class DataError(SingularEllipticError, ValueError):
    """Non-finite or malformed field data."""


class NegativeDataError(DataError):
    """A source term that must be nonnegative has a negative entry."""


class ShapeError(SingularEllipticError, ValueError):
    pass


class MarginError(SingularEllipticError, ValueError):
    pass


class ContractError(SingularEllipticError, ValueError):
    """An argument violates a documented precondition of an operation."""


class PreconditionError(ContractError):
    pass


class WindowError(ContractError):
    pass


class LinearSolveError(SingularEllipticError, RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class RegularizedSolveError(SingularEllipticError, RuntimeError):
    """Newton failed on a regularized problem; carries the residual history."""

    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = list(residuals)


class NonConvergenceError(SingularEllipticError, RuntimeError):
    """An outer iteration hit its limit; ``history`` holds the per-step record."""

    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = list(history)


class ConfigError(SingularEllipticError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConflictError(ConfigError):
    pass
