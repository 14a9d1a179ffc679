class PzTriggerError(Exception):
    """Base class for all package errors."""


class InvalidArgument(PzTriggerError, ValueError):
    pass


class EmptyImageError(PzTriggerError, ValueError):
    pass


class DataFormatError(PzTriggerError, ValueError):
    """Malformed or inconsistent file contents."""


class ExportRangeError(PzTriggerError, ValueError):
    """A table does not fit the fixed-point format chosen for it."""

    def __init__(self, table: str, max_abs: float, limit: float):
        self.table = table
        self.max_abs = max_abs
        self.limit = limit
        super().__init__(
            f"table {table!r}: max |value| {max_abs:.6g} exceeds usable range {limit:.6g}; "
            "choose a format with more integer bits"
        )
