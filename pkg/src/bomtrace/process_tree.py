"""Process subtree reconstruction and command/environment capture.

Fork, exec, and exit events rebuild the traced process tree. Exec'd
records keep their argument vectors and (by default redacted)
environments, which later become the SBOM's per-process command
properties. PIDs recycle in long builds, so records are keyed by
(pid, start_ts) rather than pid alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .events import KIND_EXEC, KIND_EXIT, KIND_FORK, BuildEvent

DEFAULT_REDACT_PATTERNS = ("token", "secret", "password", "key", "credential")
REDACTED_TOKEN = "[REDACTED]"

COMMAND_PROPERTY_PREFIX = "bomfather:command:pid="


@dataclass(frozen=True)
class RedactionPolicy:
    """Replaces values of environment keys matching any pattern.

    Patterns are case-insensitive substrings of the key. `keep_empty`
    preserves empty entries verbatim instead of normalizing them away.
    """

    patterns: tuple[str, ...] = DEFAULT_REDACT_PATTERNS
    enabled: bool = True
    keep_empty: bool = False

    def __post_init__(self):
        if self.enabled and not self.patterns:
            raise ValueError("enabled redaction policy requires patterns")
        object.__setattr__(self, "patterns",
                           tuple(p.lower() for p in self.patterns))


def redact(env: list[str] | tuple[str, ...],
           policy: RedactionPolicy) -> list[str]:
    """Redact matching values; order and length are preserved."""
    out = []
    for entry in env:
        if "=" not in entry:
            out.append(entry)
            continue
        key, _ = entry.split("=", 1)
        if policy.enabled and any(p in key.lower() for p in policy.patterns):
            out.append(f"{key}={REDACTED_TOKEN}")
        else:
            out.append(entry)
    return out


@dataclass
class ProcessRecord:
    pid: int
    ppid: int
    comm: str
    start_ts: int
    argv: tuple[str, ...] = ()
    env: tuple[str, ...] = ()
    exit_ts: int | None = None
    truncated: bool = False
    orphan: bool = False
    execed: bool = False


class ProcessTree:
    """Reconstructs the traced subtree from ts-ordered fork/exec/exit events.

    Unknown pids never raise: exec or exit for a pid that was never
    forked creates an orphan-flagged record. The very first record seen
    is the root and is exempt from orphan flagging.
    """

    def __init__(self, policy: RedactionPolicy | None = None):
        self.policy = policy or RedactionPolicy()
        self._records: list[ProcessRecord] = []
        self._current: dict[int, ProcessRecord] = {}
        self._by_pid: dict[int, list[ProcessRecord]] = {}

    def ingest(self, event: BuildEvent) -> None:
        if event.kind == KIND_FORK:
            parent = self._current.get(event.ppid)
            comm = event.comm or (parent.comm if parent else "")
            self._add(ProcessRecord(pid=event.pid, ppid=event.ppid, comm=comm,
                                    start_ts=event.ts,
                                    orphan=self._is_orphan(parent)))
        elif event.kind == KIND_EXEC:
            record = self._current.get(event.pid)
            if record is None:
                record = ProcessRecord(pid=event.pid, ppid=event.ppid,
                                       comm=event.comm, start_ts=event.ts,
                                       orphan=self._is_orphan(None))
                self._add(record)
            record.comm = event.comm
            record.argv = tuple(event.argv or ())
            record.env = tuple(self._normalize_env(event.env or ()))
            record.execed = True
        elif event.kind == KIND_EXIT:
            record = self._current.pop(event.pid, None)
            if record is None:
                record = ProcessRecord(pid=event.pid, ppid=event.ppid,
                                       comm=event.comm, start_ts=event.ts,
                                       orphan=self._is_orphan(None))
                self._add(record)
                self._current.pop(event.pid, None)
            record.exit_ts = event.ts

    def _is_orphan(self, parent: ProcessRecord | None) -> bool:
        return parent is None and bool(self._records)

    def _add(self, record: ProcessRecord) -> None:
        self._records.append(record)
        self._current[record.pid] = record
        self._by_pid.setdefault(record.pid, []).append(record)

    def _normalize_env(self, env: tuple[str, ...]) -> list[str]:
        entries = redact(env, self.policy)
        if not self.policy.keep_empty:
            entries = [e for e in entries if e != ""]
        return entries

    def records(self) -> list[ProcessRecord]:
        return list(self._records)

    def resolve(self, pid: int) -> ProcessRecord | None:
        """Most recent record for a pid, or None if never seen."""
        history = self._by_pid.get(pid)
        return history[-1] if history else None

    @property
    def orphan_count(self) -> int:
        return sum(1 for r in self._records if r.orphan)

    def command_properties(self) -> list[tuple[str, str]]:
        """One (name, value) pair per exec'd record, by (start_ts, pid)."""
        execed = sorted((r for r in self._records if r.execed),
                        key=lambda r: (r.start_ts, r.pid))
        out = []
        for record in execed:
            name = f"{COMMAND_PROPERTY_PREFIX}{record.pid}"
            value = (f"{record.comm} {' '.join(record.argv)}"
                     f"\nEnv: {', '.join(record.env)}")
            out.append((name, value))
        return out
