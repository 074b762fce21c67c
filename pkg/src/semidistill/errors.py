"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite or out-of-domain values."""


class UsageError(RuntimeError):
    """An API was called in a state its contract forbids."""


class ConfigError(ValueError):
    """A configuration value violates its invariants."""


class SamplingError(ValueError):
    """A batch request cannot be satisfied by the dataset."""


class ProtocolError(ValueError):
    """A benchmark protocol cannot be constructed as requested."""
