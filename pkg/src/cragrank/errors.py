"""Exception types shared across the package."""


class CragrankError(Exception):
    """Base class for errors raised by cragrank."""


class ParseError(CragrankError):
    """Input file could not be parsed; the message names the offending line."""


class EmptyDatasetError(CragrankError):
    """No usable ascents remain (empty input, or everything was filtered)."""

    def __init__(self, message: str, provenance: dict[str, int] | None = None):
        super().__init__(message)
        self.provenance = provenance or {}
