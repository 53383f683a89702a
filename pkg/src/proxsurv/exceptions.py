"""Exception hierarchy.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical/identification failures with 3.
"""

from __future__ import annotations


class ProxsurvError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ProxsurvError, ValueError):
    """Input data or configuration violates a documented invariant."""

    def __init__(self, message: str, violations: list | None = None):
        super().__init__(message)
        self.violations = list(violations or [])


class SchemaError(ValidationError):
    """A configured column role does not match the input file."""


class EstimationError(ProxsurvError, ArithmeticError):
    """A numerical procedure could not produce an estimate."""


class SingularDesignError(EstimationError):
    """The estimating-equation system is rank deficient.

    Attributes
    ----------
    dependent_columns : list of str
        Columns flagged as linearly dependent by the pivoted QR factorization.
    """

    def __init__(self, message: str, dependent_columns: list[str] | None = None):
        super().__init__(message)
        self.dependent_columns = list(dependent_columns or [])


class NoEventsError(EstimationError):
    """An additive-hazards fit was requested on data without events."""


class ConvergenceError(EstimationError):
    def __init__(self, message: str, gradient_norm: float = float("nan")):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class IdentificationError(SingularDesignError):
    """The second-stage design cannot identify the exposure effect."""
