"""Error taxonomy shared by every module.

Exit-code mapping used by the CLI: ValidationError and CatalogLookupError
are user/config mistakes (exit 1); FormatError and DataIOError are broken
or unreadable inputs (exit 2).
"""


class LidarRebalanceError(Exception):
    """Base class for all package errors."""


class ValidationError(LidarRebalanceError):
    """An invariant or configured numeric range was violated."""


class CatalogLookupError(ValidationError, KeyError):
    """A class id or class name is not present in the active catalog."""

    def __str__(self) -> str:  # KeyError quotes its arg; keep the message readable
        return Exception.__str__(self)


class ConfigurationError(ValidationError):
    """The requested operation needs inputs the configuration did not provide."""


class FormatError(LidarRebalanceError):
    """Malformed input bytes or text. Carries a position when one is known."""

    def __init__(self, message: str, *, path=None, line=None, offset=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte offset {offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.path = path
        self.line = line
        self.offset = offset


class DataIOError(LidarRebalanceError):
    """Filesystem-level failure while reading or writing dataset artifacts."""
