"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
2 usage/domain, 3 numeric/convergence, 4 I/O, 5 malformed configuration.
"""

from __future__ import annotations


class CKMError(Exception):
    exit_code = 1


class ConfigurationError(CKMError, ValueError):
    """Invalid arguments to a numerical routine (bad order, empty grid, ...)."""

    exit_code = 2


class DomainError(CKMError, ValueError):
    """A parameter or argument lies outside its mathematical domain."""

    exit_code = 2


class UnsupportedError(CKMError, NotImplementedError):
    exit_code = 2


class ConfigFileError(CKMError, ValueError):
    """An experiment/config file could not be parsed or validated."""

    exit_code = 5


class NumericalError(CKMError, ArithmeticError):
    exit_code = 3


class BracketError(NumericalError):
    """Root-finding interval does not bracket a sign change."""


class ConvergenceError(NumericalError):
    """An iterative method hit its iteration cap or failed to improve."""


class NumericRangeError(NumericalError):
    """Overflow or underflow that the caller must prevent (e.g. huge sieve coefficients)."""


class StateError(NumericalError):
    """An object was used before it was put into a valid state (e.g. unnormalized density)."""


class EvaluationError(NumericalError):
    """A likelihood term evaluated to a non-finite value."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class SimulationError(ConvergenceError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ExperimentError(NumericalError):
    """A Monte Carlo experiment could not produce a valid report."""
