"""Exception hierarchy shared by every cameval module."""


class CamEvalError(Exception):
    """Base class for all errors raised by cameval."""


class ContractError(CamEvalError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class UnsupportedArchitectureError(CamEvalError):
    """The requested method cannot be applied to the given model layout."""


class ConfigError(CamEvalError):
    """Invalid evaluation configuration (unknown ids, bad flags, ...)."""


class EmptyDatasetError(CamEvalError):
    """No images could be resolved from the configured source."""


class FormatError(CamEvalError):
    """A binary or text file could not be parsed.

    ``offset`` is the byte offset at which parsing failed.
    """

    def __init__(self, message, offset=0, path=None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class LengthMismatchError(FormatError):
    pass


class RankOverflowError(FormatError):
    pass


class UnknownDtypeError(FormatError):
    pass


class HeaderError(FormatError):
    """Malformed JSON header or inconsistent layer description in a model file."""


class UnsupportedFormatError(FormatError):
    """The file is well-formed but uses a variant cameval does not read."""
