"""Exception types shared across the package."""

from __future__ import annotations


class QcertError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(QcertError, ValueError):
    pass


class NotPSDError(QcertError, ValueError):
    pass


class InvalidStateError(QcertError, ValueError):
    """A matrix failed the density-matrix invariants."""


class ParameterError(QcertError, ValueError):
    """One or more named parameter constraints were violated.

    ``violations`` holds one human-readable entry per failed constraint so
    callers (and the CLI) can report all of them at once.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class TruncationExhausted(QcertError, RuntimeError):
    """Rejection sampling hit ``max_attempts`` without an accepted draw."""

    def __init__(self, message, attempts):
        super().__init__(message)
        self.attempts = attempts


class BudgetExceeded(QcertError, RuntimeError):
    """An exact engine was asked for a size beyond its configured budget."""

    def __init__(self, message, size=None, budget=None):
        super().__init__(message)
        self.size = size
        self.budget = budget


class AllMassRemoved(QcertError, ValueError):
    """Bucketing zeroed the whole spectrum."""


class NonBracketing(QcertError, ValueError):
    """The perturbation normalisation has no root for the requested eps."""

    def __init__(self, message, feasible_max):
        super().__init__(message)
        self.feasible_max = feasible_max


class ComplexInputError(QcertError, TypeError):
    """An exact engine that only supports real outcome vectors got complex ones."""


class PovmError(QcertError, ValueError):
    """A strategy produced a POVM that failed validation."""

    def __init__(self, report):
        super().__init__(f"invalid POVM: {'; '.join(report.messages)}")
        self.report = report


class ConfigError(QcertError, ValueError):
    """An experiment configuration is malformed."""
