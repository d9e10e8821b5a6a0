"""Exception hierarchy shared by the simulator modules."""


class EdmmError(Exception):
    """Base class for every simulator error."""


class InvalidArgument(EdmmError, ValueError):
    """Bad size, stale handle, or out-of-range sub-range."""


class OutOfSpace(EdmmError):
    """No free run in the pool is long enough for a reservation."""


class OutOfMemory(EdmmError):
    """An mmap could not be served even after flushing the free-page cache."""


class ProtocolViolation(EdmmError):
    """A flow was started on a page in the wrong state."""


class UseAfterFree(EdmmError):
    """Access to pages that are no longer backed by the enclave."""


class TraceError(EdmmError, ValueError):
    """Malformed or inconsistent trace input.

    ``line`` is the 1-based source line when the error came from parsing.
    """

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ReplayError(EdmmError):
    """A strategy error raised while replaying event ``index`` of a trace."""

    def __init__(self, index: int, cause: EdmmError) -> None:
        self.index = index
        self.cause = cause
        super().__init__(f"event {index}: {type(cause).__name__}: {cause}")
