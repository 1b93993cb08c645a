"""Exception hierarchy shared across the package."""


class OamSpdcError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(OamSpdcError, ValueError):
    """An input value violates a documented precondition."""


class ConfigError(OamSpdcError, ValueError):
    """A configuration file or tree is malformed or inconsistent."""


class NumericalError(OamSpdcError, RuntimeError):
    """A numerical routine failed to reach its requested accuracy.

    Attributes:
        estimate: best value achieved before giving up (may be None).
        error_estimate: achieved error estimate (may be None).
    """

    def __init__(self, message, estimate=None, error_estimate=None):
        super().__init__(message)
        self.estimate = estimate
        self.error_estimate = error_estimate


class ValidationError(OamSpdcError, ValueError):
    """Structured input data (streams, histograms, matrices) is invalid."""


class UndefinedStatisticError(OamSpdcError, ValueError):
    """A summary statistic is undefined for the given input (e.g. zero variance)."""


class TagStreamError(OamSpdcError, ValueError):
    """Base class for tag-file format errors."""


class UnsupportedVersionError(TagStreamError):
    """The file declares a format version this reader does not support."""


class TruncatedFileError(TagStreamError):
    """The file ends before the declared record count.

    Attributes:
        last_valid_offset: byte offset of the end of the last complete record.
    """

    def __init__(self, message, last_valid_offset=None):
        super().__init__(message)
        self.last_valid_offset = last_valid_offset


class CorruptRecordError(TagStreamError):
    """A record violates the format invariants (bad channel id, non-monotone time).

    Attributes:
        record_index: index of the offending record, when known.
    """

    def __init__(self, message, record_index=None):
        super().__init__(message)
        self.record_index = record_index
