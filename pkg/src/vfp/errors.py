"""Exception types shared across the package."""


class VfpError(Exception):
    """Base class for package errors."""


class DimensionError(VfpError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(VfpError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ConfigError(VfpError, ValueError):
    """A configuration value failed validation."""


class SchemaError(VfpError, ValueError):
    """A serialized artifact does not match its declared schema."""
