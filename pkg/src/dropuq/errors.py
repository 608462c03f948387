"""Exception types shared across the package."""


class DropUQError(Exception):
    """Base class for all package-specific errors."""


class ParseError(DropUQError):
    """A file could not be parsed; the message carries the offending line number."""


class ValidationError(DropUQError):
    """Input data violates a documented invariant."""


class StructuralError(DropUQError):
    """A file parses row by row but is structurally inconsistent as a whole."""


class UndefinedCorrelationError(DropUQError):
    """Rank correlation is undefined for the given inputs (constant vector)."""


class NumericalError(DropUQError):
    """An internal numerical consistency check failed (NaN loss, negative mutual information)."""
