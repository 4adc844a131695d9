"""Exception types shared across the package."""


class CbmAlignError(Exception):
    """Base class for package errors."""


class ConfigError(CbmAlignError, ValueError):
    """Invalid shapes, schemes, file contents, or configuration values."""


class NumericError(CbmAlignError, ArithmeticError):
    """A computation produced non-finite values."""


class UsageError(CbmAlignError, RuntimeError):
    """An API was called in an unsupported way."""
