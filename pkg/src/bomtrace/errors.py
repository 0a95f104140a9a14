"""Exception types shared across the bomtrace pipeline."""


class BomtraceError(Exception):
    """Base class for all bomtrace errors."""


class EventFormatError(BomtraceError, ValueError):
    """A single event record violates the replay-log format."""


class MalformedLogError(BomtraceError):
    """An event log is structurally invalid (bad line, ordering, summary)."""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class TracingUnsupportedError(BomtraceError):
    """Live capture is unavailable: no backend or missing kernel features."""


class TracingPermissionError(BomtraceError):
    """Live capture was denied: insufficient tracing privileges."""


class SbomParseError(BomtraceError):
    """SBOM bytes could not be parsed into a document."""

    def __init__(self, reason: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            reason = f"{reason} (at byte offset {offset})"
        super().__init__(reason)


class SbomConstructionError(BomtraceError):
    """Document construction refused: inputs are mutually inconsistent."""


class UnverifiableDocumentError(BomtraceError):
    """Operation requires a verifiable document (root property present)."""
