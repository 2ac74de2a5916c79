"""Exception types shared across the package."""


class MacrolocalError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MacrolocalError, ValueError):
    """Array or scenario shapes do not match."""


class InconsistentMarginalsError(MacrolocalError, ValueError):
    """Marginals differ across the other party's settings beyond tolerance."""


class EnumerationTooLargeError(MacrolocalError, ValueError):
    """Vertex or strategy enumeration would exceed the configured cap."""


class FormatError(MacrolocalError, ValueError):
    """Malformed input file. ``line`` is 1-based, or None when not line specific."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConsistencyError(MacrolocalError, ValueError):
    """A matrix disagrees with the entries fixed by its behavior."""


class DomainError(MacrolocalError, ValueError):
    """A value lies outside the domain of the requested operation."""


class PreconditionError(MacrolocalError, ValueError):
    """An input certificate or strategy fails a required check."""


class InvalidBehaviorError(MacrolocalError, ValueError):
    """A behavior fails normalization, nonnegativity or no-signaling."""


class ContractError(MacrolocalError, ValueError):
    """An argument violates an operation's documented precondition."""
