"""Exception types raised across the package."""

from __future__ import annotations


class WProjError(Exception):
    """Base class for all package errors."""


class EmptyInputError(WProjError, ValueError):
    pass


class NonFiniteError(WProjError, ValueError):
    pass


class DimensionMismatchError(WProjError, ValueError):
    pass


class BadWeightsError(WProjError, ValueError):
    """Weights are negative, zero where forbidden, or not on the simplex."""


class MissingColumnError(WProjError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ParseError(WProjError, ValueError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class AllRowsDroppedError(WProjError, ValueError):
    pass


class AllZeroImageError(WProjError, ValueError):
    pass


class SizeBudgetExceededError(WProjError, MemoryError):
    pass


class OracleSizeExceededError(WProjError, ValueError):
    pass


class ZeroRowMassError(WProjError, ValueError):
    pass


class BaseMismatchError(WProjError, ValueError):
    pass


class InsufficientSamplesError(WProjError, ValueError):
    pass


class MissingPeriodDataError(WProjError, LookupError):
    def __init__(self, unit: str, period):
        super().__init__(f"no data for unit {unit!r} in period {period!r}")
        self.unit = unit
        self.period = period


class PartialFailureError(WProjError, RuntimeError):
    """An OT solve for one (target, control) pair failed."""

    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"control {index} failed: {cause}")
        self.index = index
        self.cause = cause


class NonPSDCovarianceError(WProjError, ValueError):
    pass


class ConfigError(WProjError, ValueError):
    pass


class NotConvergedWarning(UserWarning):
    """An iterative solver stopped at max_iter; the best iterate is returned."""


class ApproximatePlanWarning(UserWarning):
    """A W2 value was computed from an entropic plan (an upper bound)."""
