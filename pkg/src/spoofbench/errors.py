"""Exception types shared across the package."""


class SpoofbenchError(Exception):
    """Base class for all package errors."""


class ValidationError(SpoofbenchError, ValueError):
    """Input violates a documented precondition or invariant."""


class ParseError(ValidationError):
    """A file could not be parsed; carries the offending location."""

    def __init__(self, message, path=None, line=None, offset=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"offset {offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.path = path
        self.line = line
        self.offset = offset


class CapabilityViolation(ValidationError):
    """A spoof trace or requested modification exceeds the attack capability."""


class OptimizationError(SpoofbenchError):
    """The attack optimizer could not produce a finite result."""
