"""Exception types shared across the package."""


class FibinetError(Exception):
    """Base class for all package errors."""


class ShapeError(FibinetError, ValueError):
    """Operands have incompatible shapes; message names both."""


class BoundsError(FibinetError, IndexError):
    """A feature index fell outside its field's bucket range."""


class NumericError(FibinetError, ArithmeticError):
    """A computation produced a non-finite value."""


class ParseError(FibinetError, ValueError):
    """An input line could not be parsed; message carries the line number."""


class MetricUndefinedError(FibinetError, ValueError):
    """The requested metric is undefined for this input (e.g. single-class AUC)."""


class ConfigError(FibinetError, ValueError):
    """A configuration value is invalid; message names the offending field."""


class CheckpointError(FibinetError, ValueError):
    """A checkpoint file is malformed or does not match its reader."""


class StateError(FibinetError, RuntimeError):
    """An operation was called outside its valid lifecycle window."""
