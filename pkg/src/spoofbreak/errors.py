"""Exception hierarchy shared across the package."""


class SpoofbreakError(Exception):
    """Base class for all package errors."""


class NotFound(SpoofbreakError, FileNotFoundError):
    pass


class DecodeError(SpoofbreakError):
    pass


class EmptyAudio(SpoofbreakError):
    pass


class ParseError(SpoofbreakError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidArgument(SpoofbreakError, ValueError):
    pass


class ShapeError(SpoofbreakError, ValueError):
    pass


class ConfigError(SpoofbreakError):
    def __init__(self, message, path=None):
        self.path = path
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class LoadError(SpoofbreakError):
    pass


class DataError(SpoofbreakError):
    pass


class BackendError(SpoofbreakError):
    pass


class NumericalError(SpoofbreakError):
    def __init__(self, message, breakdown=None):
        self.breakdown = breakdown
        super().__init__(message)
