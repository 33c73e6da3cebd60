"""Exception hierarchy shared across the harness."""


class BenchmarkError(Exception):
    """Base class for all harness errors."""


class ConfigError(BenchmarkError):
    """A config file is missing, malformed, or violates an invariant."""


class UsageError(BenchmarkError):
    """An API was called with bad arguments or in an illegal state."""


class ProtocolError(BenchmarkError):
    """A trainer emitted a record the wire protocol cannot accept."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset

    def __str__(self) -> str:
        base = super().__str__()
        if self.byte_offset is not None:
            return f"{base} (byte offset {self.byte_offset})"
        return base
