"""Exception hierarchy. The CLI maps each family to a distinct exit code."""


class DawnError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(DawnError, ValueError):
    exit_code = 2


class InputError(DawnError, ValueError):
    """Malformed or inconsistent input data (ingestion failures)."""

    exit_code = 3


class NumericalError(DawnError, ArithmeticError):
    exit_code = 4


class ConvergenceError(NumericalError):
    """An iterative solver did not reach tolerance.

    Carries the last iterate and the remaining gap so callers can inspect
    or warm-start from it.
    """

    def __init__(self, message, last_iterate=None, gap=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.gap = gap


class SeparationError(NumericalError):
    """Pseudo-likelihood has no finite maximizer (degenerate state vector)."""


class ScreeningError(ConfigError):
    """A screening step removed every candidate node at the given thresholds."""
