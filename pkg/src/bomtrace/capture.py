"""Live-capture transport: binary kernel records and the helper protocol.

The in-kernel probes publish fixed-layout binary records; this module is
the consumer side of that contract. Because attaching kernel probes
needs elevated privileges and a cooperating kernel, the actual capture
runs in a separate helper process (the probe loader). The helper is
spawned as::

    <capture-cmd ...> -- <root command ...>

and must write layout-version-1 records to stdout, ordered by ts, then
exit with the root command's exit status (or HELPER_SETUP_FAILED before
emitting anything if tracing could not be attached). The helper command
comes from configuration or the BOMTRACE_CAPTURE_CMD environment
variable; without one, live tracing is unsupported on this system.

Record layout v1 (little-endian)::

    u8  layout version (= 1)
    u8  kind            (1 open, 2 fork, 3 exec, 4 exit, 5 drop)
    u8  flags           (bit 0: payload was truncated)
    u8  reserved        (= 0)
    u64 ts              (monotonic ns since trace start)
    u32 pid
    u32 ppid
    u8  comm[16]        (NUL-padded)
    u32 payload_len
    u8  payload[payload_len]

Payloads: open = u32 open(2) flags + path bytes; exec = u32 argc,
argc x (u32 len + bytes), u32 envc, envc x (u32 len + bytes);
drop = u32 lost-record count; fork/exit = empty.
"""

from __future__ import annotations

import os
import shlex
import struct
import subprocess
from dataclasses import dataclass
from typing import IO, Iterator

from . import TOOL_NAME, __version__
from .errors import (
    BomtraceError,
    TracingPermissionError,
    TracingUnsupportedError,
)
from .events import (
    KIND_DROP,
    KIND_EXEC,
    KIND_EXIT,
    KIND_FORK,
    KIND_OPEN,
    BuildEvent,
    LogHeader,
    utc_now_rfc3339,
)

LAYOUT_VERSION = 1
HEADER_SIZE = 40
COMM_SIZE = 16
MAX_PATH_BYTES = 4096
MAX_ARGV_ENV_BYTES = 32768
# exec payload worst case: argc/envc words plus a length word per string.
MAX_PAYLOAD_BYTES = 8 + MAX_ARGV_ENV_BYTES + 4 * 2048
MAX_RECORD_BYTES = HEADER_SIZE + MAX_PAYLOAD_BYTES

FLAG_TRUNCATED = 0x01

RAW_OPEN, RAW_FORK, RAW_EXEC, RAW_EXIT, RAW_DROP = 1, 2, 3, 4, 5
_RAW_TO_KIND = {RAW_OPEN: KIND_OPEN, RAW_FORK: KIND_FORK, RAW_EXEC: KIND_EXEC,
                RAW_EXIT: KIND_EXIT, RAW_DROP: KIND_DROP}

# open(2) flag bits relevant to the r/w/rw mapping.
O_ACCMODE = 0o3
O_WRONLY = 0o1
O_RDWR = 0o2
O_CREAT = 0o100
O_TRUNC = 0o1000

HELPER_SETUP_FAILED = 103

_HEADER = struct.Struct("<BBBBQII16sI")


class CaptureFormatError(BomtraceError):
    """The helper's binary record stream is corrupt."""


@dataclass(frozen=True)
class RawKernelRecord:
    kind: int
    ts: int
    pid: int
    ppid: int
    comm: str
    truncated: bool
    open_flags: int | None = None
    path: str | None = None
    argv: tuple[str, ...] | None = None
    env: tuple[str, ...] | None = None
    dropped: int | None = None


def mode_from_flags(flags: int) -> str:
    """Map open(2) flags to the r/w/rw access mode."""
    accmode = flags & O_ACCMODE
    if accmode == O_RDWR:
        return "rw"
    if accmode == O_WRONLY or flags & (O_CREAT | O_TRUNC):
        return "w"
    return "r"


def _read_exact(stream: IO[bytes], n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            if buf:
                raise CaptureFormatError("truncated record stream")
            return None
        buf += chunk
    return buf


def _decode_strings(payload: bytes, offset: int, what: str):
    if offset + 4 > len(payload):
        raise CaptureFormatError(f"truncated {what} count")
    (count,) = struct.unpack_from("<I", payload, offset)
    offset += 4
    out = []
    for _ in range(count):
        if offset + 4 > len(payload):
            raise CaptureFormatError(f"truncated {what} length")
        (length,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        if offset + length > len(payload):
            raise CaptureFormatError(f"truncated {what} string")
        out.append(payload[offset:offset + length].decode("utf-8", "replace"))
        offset += length
    return tuple(out), offset


def read_records(stream: IO[bytes]) -> Iterator[RawKernelRecord]:
    """Decode a layout-v1 record stream until EOF."""
    while True:
        head = _read_exact(stream, HEADER_SIZE)
        if head is None:
            return
        version, kind, flags, reserved, ts, pid, ppid, comm_raw, payload_len = \
            _HEADER.unpack(head)
        if version != LAYOUT_VERSION:
            raise CaptureFormatError(f"unsupported record layout {version}")
        if kind not in _RAW_TO_KIND:
            raise CaptureFormatError(f"unknown record kind {kind}")
        if payload_len > MAX_PAYLOAD_BYTES:
            raise CaptureFormatError(f"payload length {payload_len} exceeds cap")
        payload = _read_exact(stream, payload_len) if payload_len else b""
        if payload is None:
            raise CaptureFormatError("truncated record stream")
        comm = comm_raw.split(b"\x00", 1)[0].decode("utf-8", "replace")
        truncated = bool(flags & FLAG_TRUNCATED)

        open_flags = path = argv = env = dropped = None
        if kind == RAW_OPEN:
            if payload_len < 4:
                raise CaptureFormatError("open record payload too short")
            (open_flags,) = struct.unpack_from("<I", payload, 0)
            path_bytes = payload[4:]
            if len(path_bytes) > MAX_PATH_BYTES:
                raise CaptureFormatError("open record path exceeds cap")
            path = path_bytes.decode("utf-8", "replace")
        elif kind == RAW_EXEC:
            argv, offset = _decode_strings(payload, 0, "argv")
            env, offset = _decode_strings(payload, offset, "env")
            if offset != payload_len:
                raise CaptureFormatError("exec record has trailing bytes")
        elif kind == RAW_DROP:
            if payload_len != 4:
                raise CaptureFormatError("drop record payload must be 4 bytes")
            (dropped,) = struct.unpack_from("<I", payload, 0)
        elif payload_len:
            raise CaptureFormatError(f"kind {kind} record must have no payload")

        yield RawKernelRecord(kind=kind, ts=ts, pid=pid, ppid=ppid, comm=comm,
                              truncated=truncated, open_flags=open_flags,
                              path=path, argv=argv, env=env, dropped=dropped)


def to_build_event(record: RawKernelRecord) -> BuildEvent:
    """Convert a transport record to the pipeline event model."""
    kind = _RAW_TO_KIND[record.kind]
    event = BuildEvent(
        ts=record.ts,
        kind=kind,
        pid=record.pid,
        ppid=record.ppid,
        comm=record.comm,
        path=record.path if kind == KIND_OPEN else None,
        mode=mode_from_flags(record.open_flags) if kind == KIND_OPEN else None,
        argv=record.argv if kind == KIND_EXEC else None,
        env=record.env if kind == KIND_EXEC else None,
        dropped=record.dropped if kind == KIND_DROP else None,
    )
    event.validate()
    return event


def default_capture_command() -> tuple[str, ...] | None:
    raw = os.environ.get("BOMTRACE_CAPTURE_CMD", "").strip()
    if not raw:
        return None
    return tuple(shlex.split(raw))


class LiveSource:
    """Event stream over a freshly launched, kernel-traced build command.

    Single-consumer. The stream ends when the traced process subtree has
    exited and the helper closes its stdout; `returncode` then carries
    the root command's exit status.
    """

    def __init__(self, command: tuple[str, ...],
                 capture_command: tuple[str, ...] | None = None):
        if not command:
            raise ValueError("live source requires a command to trace")
        capture_command = capture_command or default_capture_command()
        if not capture_command:
            raise TracingUnsupportedError(
                "no kernel capture backend is available on this system "
                "(set BOMTRACE_CAPTURE_CMD to a probe-loader helper)")
        argv = list(capture_command) + ["--"] + list(command)
        try:
            self._proc = subprocess.Popen(argv, stdout=subprocess.PIPE)
        except FileNotFoundError as exc:
            raise TracingUnsupportedError(
                f"capture helper not found: {capture_command[0]}") from exc
        except PermissionError as exc:
            raise TracingPermissionError(
                f"capture helper not executable: {capture_command[0]}") from exc
        self.header = LogHeader(started=utc_now_rfc3339(),
                                tool=f"{TOOL_NAME}/{__version__}")
        self.returncode: int | None = None
        self._yielded = 0

    def __iter__(self) -> Iterator[BuildEvent]:
        last_ts = -1
        assert self._proc.stdout is not None
        for record in read_records(self._proc.stdout):
            event = to_build_event(record)
            if event.ts < last_ts:
                raise CaptureFormatError(
                    f"helper emitted ts {event.ts} after {last_ts}")
            last_ts = event.ts
            self._yielded += 1
            yield event
        self.returncode = self._proc.wait()
        if self._yielded == 0 and self.returncode == HELPER_SETUP_FAILED:
            raise TracingPermissionError(
                "capture helper could not attach kernel probes "
                "(insufficient privilege or unsupported kernel)")

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            self._proc.wait()
        if self._proc.stdout is not None:
            self._proc.stdout.close()

    def __enter__(self) -> "LiveSource":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
