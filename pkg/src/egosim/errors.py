"""Exception types shared across the package."""


class EgosimError(Exception):
    """Base class for all package-specific errors."""


class PreconditionError(EgosimError, ValueError):
    """An operation was called with inputs violating its contract."""


class DimensionError(EgosimError, ValueError):
    """An array has the wrong shape or length."""


class ParseError(EgosimError, ValueError):
    """A file could not be parsed; message names the offending location."""


class ConfigError(EgosimError, ValueError):
    """Invalid or unknown configuration keys/values."""
