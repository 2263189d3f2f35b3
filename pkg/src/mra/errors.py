"""Exception hierarchy shared by every module in the package."""


class MRAError(Exception):
    """Base class for all package errors."""


class ValidationError(MRAError, ValueError):
    """An argument is outside its allowed domain."""


class GeometryError(ValidationError):
    """Image or patch-grid dimensions are inconsistent."""


class NumericError(MRAError, ArithmeticError):
    """A non-finite value appeared in activations, losses or gradients."""


class StateError(MRAError, RuntimeError):
    """An operation was called before the state it needs exists."""


class ConfigError(MRAError, ValueError):
    """A run configuration is malformed or inconsistent."""


class SchemaError(ConfigError):
    """A persisted document has the wrong kind or schema version."""


class CorruptDataError(MRAError, IOError):
    """A dataset file does not match its byte layout."""


class CorruptCheckpointError(MRAError, IOError):
    """A checkpoint failed integrity checks."""


class EmptyDatasetError(MRAError, IOError):
    """A dataset source contains no samples."""
