"""Exception hierarchy shared by all coopner modules.

The three top-level classes map onto CLI exit codes: ConfigError -> 1,
DataError -> 2, ServiceError -> 3.
"""


class CoopnerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CoopnerError):
    """Invalid configuration, flag combination, or parameter shapes."""


class DataError(CoopnerError):
    """Malformed or inconsistent input data."""


class ServiceError(CoopnerError):
    """A search service failed and no cached result was available."""


class ConllParseError(DataError):
    """A CoNLL line could not be parsed; carries the 1-based line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class AlignmentError(DataError):
    """Gold and predicted sequences do not line up."""


class DumpFormatError(DataError):
    """A JSON-lines dump record is malformed; carries the record index."""

    def __init__(self, message, record_index=None):
        if record_index is not None:
            message = f"record {record_index}: {message}"
        super().__init__(message)
        self.record_index = record_index


class RetrievalError(ServiceError):
    """Retrieval failed for a query; carries the failing query string."""

    def __init__(self, message, query=None):
        super().__init__(message)
        self.query = query
