"""Exception hierarchy shared by every module."""


class BellLabError(Exception):
    """Base class for all errors raised by bell_lab."""


class InputError(BellLabError, ValueError):
    """Malformed or out-of-domain input."""


class ConfigurationError(BellLabError, ValueError):
    """A model or experiment is configured inconsistently."""


class ContractError(BellLabError, TypeError):
    """An operation was requested for an object that cannot support it."""


class StatisticalError(BellLabError, ValueError):
    """Too little data for the requested statistical resolution.

    ``required`` carries the minimum sample size when it is known.
    """

    def __init__(self, message: str, required: int | None = None):
        if required is not None:
            message = f"{message} (need at least {required})"
        super().__init__(message)
        self.required = required


class InvariantViolation(BellLabError, AssertionError):
    """An internal invariant failed; indicates a bug, not bad input."""
