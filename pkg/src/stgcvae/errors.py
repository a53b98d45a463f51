"""Shared exception types."""


class StgcvaeError(Exception):
    """Base class for all library errors."""


class DimensionError(StgcvaeError):
    """Operand shapes are incompatible for the requested operation."""


class ParameterError(StgcvaeError):
    """A numeric argument is outside its valid range."""


class ContractError(StgcvaeError):
    """An API precondition was violated (e.g. non-scalar loss)."""


class ConfigError(StgcvaeError):
    """Invalid configuration value or unknown config key."""

class FormatError(StgcvaeError):
    """A binary file has a bad magic number, version, or is truncated."""


class ParseError(StgcvaeError):
    """A text input file could not be parsed; message names file and line."""


class IntegrityError(StgcvaeError):
    """Input data violates a structural invariant (e.g. duplicate rows)."""
