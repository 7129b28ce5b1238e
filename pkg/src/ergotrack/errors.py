"""Exception hierarchy shared by all ergotrack modules."""


class ErgotrackError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(ErgotrackError, ValueError):
    """Model parameters do not satisfy the requirements of a control class."""


class DomainError(ErgotrackError, ValueError):
    """Special-function argument outside the supported domain."""


class RootFindingError(ErgotrackError, RuntimeError):
    """Bracketing or root finding failed.

    ``diagnostics`` carries the bracket endpoints and function values that
    were inspected, so callers can report why the bracket was rejected.
    """

    def __init__(self, message, **diagnostics):
        self.diagnostics = diagnostics
        if diagnostics:
            detail = ", ".join(f"{k}={v!r}" for k, v in diagnostics.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class GridError(ErgotrackError, ValueError):
    """Discretization grid is malformed (spacing, alignment, node placement)."""


class ExponentError(ErgotrackError, ValueError):
    """Cost exponents are inconsistent with a single rate beta."""


class SolverError(ErgotrackError, RuntimeError):
    """A numerical solver failed to produce a usable answer."""


class ConfigError(ErgotrackError, ValueError):
    """Run configuration is missing fields or has malformed values."""
