"""Exception types shared across the package."""


class GTNError(Exception):
    """Base class for all package errors."""


class DimensionError(GTNError, ValueError):
    """Tensor extents do not agree for the requested operation."""


class ValidationError(GTNError, ValueError):
    """An architecture, config, or input failed validation.

    ``field`` names the offending field when one can be identified.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class UnsupportedOperationError(GTNError):
    """The operation does not apply to this object (e.g. gradient of a fixed feature map)."""


class NumericOverflowError(GTNError, ArithmeticError):
    """A network score became non-finite.

    ``traces`` holds the per-string trace values of the offending samples so the
    overflowing string can be identified.
    """

    def __init__(self, message, traces=None):
        super().__init__(message)
        self.traces = traces


class ResourceError(GTNError):
    """An exhaustive computation would exceed its state-space guard."""


class ParseError(GTNError, ValueError):
    """A data or checkpoint file could not be parsed.

    ``offset`` is the byte offset (binary formats) or ``row`` the 1-based row
    number (text formats) where parsing failed.
    """

    def __init__(self, message, offset=None, row=None):
        super().__init__(message)
        self.offset = offset
        self.row = row


class BadMagicError(ParseError):
    pass


class TruncatedFileError(ParseError):
    pass


class CountMismatchError(ParseError):
    pass
