class DomacError(Exception):
    """Base class for every failure raised by the package."""

    exit_code = 2

    def __init__(self, message, details=None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class ConfigurationError(DomacError):
    """Invalid shapes, sizes or settings supplied by the caller."""

    def __init__(self, message, field=None, line=None, details=None):
        if field is not None and line is not None:
            message = f"{field} (line {line}): {message}"
        elif field is not None:
            message = f"{field}: {message}"
        super().__init__(message, details)
        self.field = field
        self.line = line


class ShapeError(ConfigurationError):
    pass


class NumericError(DomacError):
    """NaN/Inf in inputs, gradients or losses."""


class EnumerationCapError(DomacError):
    pass


class EnvironmentStateError(DomacError):
    pass


class MetricError(DomacError):
    pass


class CheckpointError(DomacError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class UsageError(DomacError):
    exit_code = 1
