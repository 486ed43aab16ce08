"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so keep the hierarchy flat and
stable: ConfigError -> 2, DependencyError -> 3, IntegrityError -> 4.
"""


class RetdebiasError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(RetdebiasError, ValueError):
    """An argument violates an operation's preconditions."""


class SpecificationError(RetdebiasError, ValueError):
    """A population or partition request is internally infeasible."""


class DegenerateInputError(RetdebiasError, ValueError):
    """Input carries no usable signal (e.g. an all-background image)."""


class NumericError(RetdebiasError, ArithmeticError):
    """Non-finite values encountered where finite arithmetic is required."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class UndefinedCellError(RetdebiasError, ValueError):
    """A conditional frequency is requested for an empty (group, label) cell."""

    def __init__(self, cell: str):
        super().__init__(f"empty conditioning cell {cell}")
        self.cell = cell


class UndefinedAUCError(RetdebiasError, ValueError):
    """ROC/AUC requested for a group with a single outcome class."""


class InsufficientStartersError(RetdebiasError, RuntimeError):
    """Starter pool exhausted before the requested sample count was accepted."""

    def __init__(self, message: str, acceptance_rate: float):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


class ConfigError(RetdebiasError, ValueError):
    """A run configuration file or value is invalid."""


class SchemaError(RetdebiasError, ValueError):
    """A CSV or JSON artifact violates its declared schema."""


class DependencyError(RetdebiasError, RuntimeError):
    """A pipeline stage was requested before its prerequisites exist."""


class IntegrityError(RetdebiasError, RuntimeError):
    """Artifact checksums, pool disjointness, or run locking was violated."""
