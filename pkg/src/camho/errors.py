"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific type that applies rather than bare ValueError where a
category below fits.
"""


class TraceFormatError(ValueError):
    """A trace directory or file does not conform to the on-disk format."""


class ProtocolViolationError(ValueError):
    """An action was requested that the current decision state forbids."""


class InsufficientDataError(ValueError):
    """A trace is too short for the requested operation."""


class EndOfTraceError(IndexError):
    """Attempted to step past the final epoch of a trace segment."""


class CompatibilityError(ValueError):
    """Inputs that are individually valid do not fit together."""
