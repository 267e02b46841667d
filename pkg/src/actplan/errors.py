"""Exception types shared across the package."""

from __future__ import annotations


class ActplanError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ActplanError):
    """A profile or plan file is malformed or does not match the schema."""


class ValidationError(ActplanError):
    """A value violates a documented invariant.

    Messages name the offending field and, where applicable, the operator id.
    """


class NonFiniteInputError(ActplanError):
    """An activation tensor contains NaN or infinity."""


class CorruptPayloadError(ActplanError):
    """A serialized compressed tensor fails structural validation."""


class NonBinaryMaskError(ActplanError):
    """A dropout mask contains bytes other than 0 and 1."""


class TooManyOutliersError(ActplanError):
    """Outlier detection flagged more than half of all channels."""


class InfeasibleError(ActplanError):
    """No assignment fits the memory budget.

    Carries the minimal achievable total memory so callers can report how far
    the budget would have to grow.
    """

    def __init__(self, message: str, min_total_bytes: int):
        super().__init__(message)
        self.min_total_bytes = min_total_bytes


class TooLargeError(ActplanError):
    """Exhaustive enumeration was asked for more operators than it supports."""


class InfeasiblePlanError(ActplanError):
    """A concrete plan exceeds the memory budget it is simulated under."""


class OutOfOrderIterationError(ActplanError):
    """Iterations were fed to a tracking schedule in non-increasing order."""
