"""Exception hierarchy shared across the pipeline.

Every error carries the CLI exit code it maps to, so the command-line layer
can translate failures without a lookup table of its own.
"""


class SynidsError(Exception):
    exit_code = 1


# capture ingest
class MalformedHeader(SynidsError):
    exit_code = 4


class TruncatedRecord(SynidsError):
    """Raised when a capture record claims more bytes than remain.

    ``packets`` holds everything parsed before the damaged record.
    """

    exit_code = 4

    def __init__(self, message, packets=None):
        super().__init__(message)
        self.packets = list(packets or [])


class LineParseError(SynidsError):
    exit_code = 4

    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


# geometry
class DegenerateBasis(SynidsError):
    pass


class DimensionMismatch(SynidsError):
    pass


class EmptyInput(SynidsError):
    pass


# learning
class InsufficientData(SynidsError):
    exit_code = 3


class MissingClass(SynidsError):
    exit_code = 2


class EmptyClass(SynidsError):
    exit_code = 2


# model file
class FileError(SynidsError):
    exit_code = 4


class FormatVersionMismatch(SynidsError):
    exit_code = 4


class ChecksumMismatch(SynidsError):
    exit_code = 4


class InvalidSpec(SynidsError):
    exit_code = 4


class ConfigError(SynidsError):
    exit_code = 4
