"""Build-event data model and the bit-exact replay log codec.

One build produces an append-only log of line-delimited JSON records:
a header line, one line per observed event, and an optional summary
line. Keys are emitted in a fixed order so identical events serialize
to identical bytes. The same `BuildEvent` stream is produced by the
live kernel source (see `capture`) and by replaying a log, so the rest
of the pipeline does not care where events came from.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from typing import IO, Iterator, Union

from .errors import EventFormatError, MalformedLogError

FORMAT_VERSION = 1

KIND_OPEN = "open"
KIND_FORK = "fork"
KIND_EXEC = "exec"
KIND_EXIT = "exit"
KIND_DROP = "drop"
EVENT_KINDS = (KIND_OPEN, KIND_FORK, KIND_EXEC, KIND_EXIT, KIND_DROP)

MODE_READ = "r"
MODE_WRITE = "w"
MODE_READWRITE = "rw"
MODES = (MODE_READ, MODE_WRITE, MODE_READWRITE)

MAX_COMM_BYTES = 64

# Serialization order is part of the on-disk contract; do not reorder.
EVENT_KEY_ORDER = (
    "v", "ts", "kind", "pid", "ppid", "comm",
    "path", "mode", "argv", "env", "sha256", "dropped",
)

_HEX64 = re.compile(r"^[0-9a-f]{64}$")

# Keys an event record must / may carry, beyond "v" and "kind".
_REQUIRED_KEYS = {
    KIND_OPEN: frozenset({"ts", "pid", "comm", "path", "mode"}),
    KIND_FORK: frozenset({"ts", "pid", "ppid", "comm"}),
    KIND_EXEC: frozenset({"ts", "pid", "ppid", "comm", "argv", "env"}),
    KIND_EXIT: frozenset({"ts", "pid", "comm"}),
    KIND_DROP: frozenset({"ts", "pid", "comm", "dropped"}),
}
_OPTIONAL_KEYS = {
    KIND_OPEN: frozenset({"ppid", "sha256"}),
    KIND_FORK: frozenset(),
    KIND_EXEC: frozenset(),
    KIND_EXIT: frozenset({"ppid"}),
    KIND_DROP: frozenset(),
}


@dataclass(frozen=True)
class BuildEvent:
    """One kernel-observed occurrence during a traced build.

    ``ts`` is monotonic nanoseconds since trace start. ``ppid`` is 0 when
    the parent is unknown (only fork/exec require it). ``sha256`` carries
    the content digest on replayed open events; live open events gain it
    only once the hashing stage has seen the file.
    """

    ts: int
    kind: str
    pid: int
    ppid: int = 0
    comm: str = ""
    path: str | None = None
    mode: str | None = None
    argv: tuple[str, ...] | None = None
    env: tuple[str, ...] | None = None
    sha256: str | None = None
    dropped: int | None = None

    def validate(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise EventFormatError(f"unknown event kind {self.kind!r}")
        _check_int(self.ts, "ts", minimum=0)
        # The drop record is synthesized by the transport and carries no
        # process identity, so pid 0 is tolerated there only.
        _check_int(self.pid, "pid", minimum=0 if self.kind == KIND_DROP else 1)
        if self.kind in (KIND_FORK, KIND_EXEC):
            _check_int(self.ppid, "ppid", minimum=1)
        else:
            _check_int(self.ppid, "ppid", minimum=0)
        if not isinstance(self.comm, str):
            raise EventFormatError("comm must be a string")
        if len(self.comm.encode("utf-8")) > MAX_COMM_BYTES:
            raise EventFormatError(f"comm exceeds {MAX_COMM_BYTES} bytes")

        if self.kind == KIND_OPEN:
            if self.path is None:
                raise EventFormatError("path required for kind=open")
            validate_path(self.path)
            if self.mode not in MODES:
                raise EventFormatError("mode must be one of r, w, rw")
        else:
            if self.path is not None:
                raise EventFormatError(f"path not allowed for kind={self.kind}")
            if self.mode is not None:
                raise EventFormatError(f"mode not allowed for kind={self.kind}")

        if self.kind == KIND_EXEC:
            for field, val in (("argv", self.argv), ("env", self.env)):
                if val is None:
                    raise EventFormatError(f"{field} required for kind=exec")
                if not all(isinstance(s, str) for s in val):
                    raise EventFormatError(f"{field} entries must be strings")
        else:
            if self.argv is not None or self.env is not None:
                raise EventFormatError(f"argv/env not allowed for kind={self.kind}")

        if self.sha256 is not None:
            if self.kind != KIND_OPEN:
                raise EventFormatError(f"sha256 not allowed for kind={self.kind}")
            if not isinstance(self.sha256, str) or not _HEX64.match(self.sha256):
                raise EventFormatError("sha256 must be 64 lowercase hex characters")

        if self.kind == KIND_DROP:
            if self.dropped is None:
                raise EventFormatError("dropped required for kind=drop")
            _check_int(self.dropped, "dropped", minimum=1)
        elif self.dropped is not None:
            raise EventFormatError(f"dropped not allowed for kind={self.kind}")

    def with_sha256(self, hex_digest: str) -> "BuildEvent":
        return replace(self, sha256=hex_digest)


@dataclass(frozen=True)
class LogHeader:
    started: str  # RFC 3339 UTC wall clock at trace start
    tool: str     # "<name>/<version>"


@dataclass(frozen=True)
class LogSummary:
    events: int
    dropped: int


LogRecord = Union[BuildEvent, LogHeader, LogSummary]


def _check_int(value, name: str, minimum: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise EventFormatError(f"{name} must be an integer")
    if value < minimum:
        raise EventFormatError(f"{name} must be >= {minimum}, got {value}")


def validate_path(path) -> None:
    """Reject paths that are not absolute and canonical."""
    if not isinstance(path, str):
        raise EventFormatError("path must be a string")
    if not path.startswith("/"):
        raise EventFormatError(f"path must be absolute: {path!r}")
    for segment in path.split("/")[1:]:
        if segment in ("", ".", ".."):
            raise EventFormatError(f"path is not canonical: {path!r}")


def _check_rfc3339_utc(value, name: str) -> None:
    if not isinstance(value, str):
        raise EventFormatError(f"{name} must be a string")
    try:
        parsed = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        raise EventFormatError(f"{name} is not an RFC 3339 timestamp: {value!r}")
    if parsed.tzinfo is None or parsed.utcoffset() != timedelta(0):
        raise EventFormatError(f"{name} must be UTC: {value!r}")


def utc_now_rfc3339() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_line(line: str) -> LogRecord:
    """Parse one replay-log line into its record.

    Returns a BuildEvent, LogHeader, or LogSummary; raises
    EventFormatError on any malformation, including unknown keys and
    kind-conditional fields that are missing or extraneous.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise EventFormatError(f"invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise EventFormatError("record must be a JSON object")
    if obj.get("v") != FORMAT_VERSION or isinstance(obj.get("v"), bool):
        raise EventFormatError(f"unsupported format version {obj.get('v')!r}")
    kind = obj.get("kind")

    if kind == "header":
        _reject_unknown(obj, {"v", "kind", "started", "tool"})
        for key in ("started", "tool"):
            if key not in obj:
                raise EventFormatError(f"header missing {key!r}")
        _check_rfc3339_utc(obj["started"], "started")
        tool = obj["tool"]
        if not isinstance(tool, str) or "/" not in tool or tool.startswith("/"):
            raise EventFormatError(f"tool must look like name/version: {tool!r}")
        return LogHeader(started=obj["started"], tool=tool)

    if kind == "summary":
        _reject_unknown(obj, {"v", "kind", "events", "dropped"})
        for key in ("events", "dropped"):
            if key not in obj:
                raise EventFormatError(f"summary missing {key!r}")
            _check_int(obj[key], key, minimum=0)
        return LogSummary(events=obj["events"], dropped=obj["dropped"])

    if kind not in EVENT_KINDS:
        raise EventFormatError(f"unknown event kind {kind!r}")
    required = _REQUIRED_KEYS[kind]
    allowed = required | _OPTIONAL_KEYS[kind] | {"v", "kind"}
    _reject_unknown(obj, allowed)
    missing = required - obj.keys()
    if missing:
        raise EventFormatError(
            f"{sorted(missing)[0]} required for kind={kind}"
        )

    argv = obj.get("argv")
    env = obj.get("env")
    for field, val in (("argv", argv), ("env", env)):
        if val is not None and not isinstance(val, list):
            raise EventFormatError(f"{field} must be an array")
    event = BuildEvent(
        ts=obj["ts"],
        kind=kind,
        pid=obj["pid"],
        ppid=obj.get("ppid", 0),
        comm=obj.get("comm", ""),
        path=obj.get("path"),
        mode=obj.get("mode"),
        argv=tuple(argv) if argv is not None else None,
        env=tuple(env) if env is not None else None,
        sha256=obj.get("sha256"),
        dropped=obj.get("dropped"),
    )
    event.validate()
    return event


def _reject_unknown(obj: dict, allowed: set) -> None:
    unknown = obj.keys() - allowed
    if unknown:
        raise EventFormatError(f"unknown key {sorted(unknown)[0]!r}")


def _dump(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def serialize_event(event: BuildEvent) -> str:
    """Serialize a validated event to one log line (no trailing newline)."""
    event.validate()
    out: dict = {"v": FORMAT_VERSION, "ts": event.ts, "kind": event.kind,
                 "pid": event.pid}
    if event.kind in (KIND_FORK, KIND_EXEC) or event.ppid != 0:
        out["ppid"] = event.ppid
    out["comm"] = event.comm
    if event.path is not None:
        out["path"] = event.path
    if event.mode is not None:
        out["mode"] = event.mode
    if event.argv is not None:
        out["argv"] = list(event.argv)
    if event.env is not None:
        out["env"] = list(event.env)
    if event.sha256 is not None:
        out["sha256"] = event.sha256
    if event.dropped is not None:
        out["dropped"] = event.dropped
    assert list(out) == [k for k in EVENT_KEY_ORDER if k in out]
    return _dump(out)


def serialize_header(header: LogHeader) -> str:
    return _dump({"v": FORMAT_VERSION, "kind": "header",
                  "started": header.started, "tool": header.tool})


def serialize_summary(summary: LogSummary) -> str:
    return _dump({"v": FORMAT_VERSION, "kind": "summary",
                  "events": summary.events, "dropped": summary.dropped})


@dataclass
class SourceConfig:
    """Selects exactly one event source: a replay log or a live command."""

    replay_path: str | None = None
    live_command: tuple[str, ...] | None = None
    capture_command: tuple[str, ...] | None = None  # live transport helper

    def validate(self) -> None:
        if (self.replay_path is None) == (self.live_command is None):
            raise ValueError("exactly one of replay_path/live_command required")


class ReplaySource:
    """Pull-based event stream over a replay log.

    Yields events in file order, enforcing non-decreasing ts; validates
    the optional trailing summary against actual event and drop counts.
    Single-consumer: iterate once.
    """

    def __init__(self, path: str):
        self.path = path
        self._fp: IO[str] = open(path, "r", encoding="utf-8", newline="\n")
        self._line_no = 0
        self.events_read = 0
        self.dropped_total = 0
        first = self._fp.readline()
        self._line_no = 1
        if not first:
            self._fail("empty log: missing header")
        record = self._parse(first)
        if not isinstance(record, LogHeader):
            self._fail("first line must be the header record")
        self.header: LogHeader = record

    def _fail(self, reason: str):
        raise MalformedLogError(self._line_no, reason)

    def _parse(self, line: str) -> LogRecord:
        try:
            return parse_line(line.rstrip("\n"))
        except EventFormatError as exc:
            self._fail(str(exc))

    def __iter__(self) -> Iterator[BuildEvent]:
        last_ts = -1
        summary_seen = False
        for line in self._fp:
            self._line_no += 1
            if summary_seen:
                self._fail("records after summary line")
            record = self._parse(line)
            if isinstance(record, LogHeader):
                self._fail("duplicate header record")
            if isinstance(record, LogSummary):
                summary_seen = True
                if record.events != self.events_read:
                    self._fail(
                        f"summary events={record.events} but log has "
                        f"{self.events_read}")
                if record.dropped != self.dropped_total:
                    self._fail(
                        f"summary dropped={record.dropped} but drop events "
                        f"total {self.dropped_total}")
                continue
            if record.ts < last_ts:
                self._fail(
                    f"ts decreases from {last_ts} to {record.ts}")
            last_ts = record.ts
            self.events_read += 1
            if record.kind == KIND_DROP:
                self.dropped_total += record.dropped
            yield record
        self.close()

    def close(self) -> None:
        if not self._fp.closed:
            self._fp.close()

    def __enter__(self) -> "ReplaySource":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_source(config: SourceConfig):
    """Open the configured event source (replay log or live capture)."""
    config.validate()
    if config.replay_path is not None:
        return ReplaySource(config.replay_path)
    from .capture import LiveSource
    return LiveSource(config.live_command, config.capture_command)
