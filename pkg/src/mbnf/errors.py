"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MbnfError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(MbnfError):
    """Invalid configuration or inconsistent model/feature geometry."""

    exit_code = 2


class DataError(MbnfError):
    """Missing or malformed input data."""

    exit_code = 3


class OverwriteError(MbnfError):
    """Output already exists and --force was not given."""

    exit_code = 4


class IntegrityError(MbnfError):
    """Archive corruption: bad magic, version, or checksum."""

    exit_code = 5


class TooShortError(DataError):
    """Signal shorter than one analysis frame."""


class InfeasibleAlignmentError(DataError):
    """Utterance has fewer frames than transcript states."""
