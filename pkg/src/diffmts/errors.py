"""Exception hierarchy shared across the package."""


class DiffMTSError(Exception):
    """Base class for all package errors."""


class ValidationError(DiffMTSError, ValueError):
    """Input values violate a documented precondition."""


class ShapeError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class GraphError(DiffMTSError, RuntimeError):
    """Backward pass requested through a value that was never recorded."""


class TrainingError(DiffMTSError, RuntimeError):
    pass


class FormatError(DiffMTSError):
    """Malformed file contents."""


class ParseError(FormatError):
    pass


class VersionError(FormatError):
    pass
