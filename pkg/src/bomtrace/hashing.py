"""Content hashing and aggregation of open events into file observations.

Every open event lands here. Reads are hashed (or take their digest from
the replayed log), writes mark the path dirty until the next read or
finalize re-hashes it, and repeated sightings of unchanged content fold
into one observation per (path, content-version). Paths whose content
cannot be committed to (excluded by filters, vanished, unreadable,
non-regular) are still recorded, but with a null digest so they never
become Merkle leaves.
"""

from __future__ import annotations

import hashlib
import os
import stat as stat_mod
import threading
from bisect import bisect_left, bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from typing import BinaryIO, Iterable

from .errors import BomtraceError
from .events import KIND_OPEN, BuildEvent

HASH_ALGORITHM = "SHA-256"
_CHUNK_SIZE = 1 << 20

DEFAULT_EXCLUDE_GLOBS = ("/proc/*", "/sys/*", "/dev/*")

CLASS_INPUT = "input"
CLASS_OUTPUT = "output"
CLASS_INTERMEDIATE = "intermediate"

REASON_VANISHED = "vanished"
REASON_PERMISSION = "permission"
REASON_NON_REGULAR = "non-regular"
REASON_EXCLUDED = "excluded"


class HashReadError(BomtraceError):
    """A stream failed mid-hash; carries how many bytes were consumed."""

    def __init__(self, bytes_read: int, cause: Exception):
        self.bytes_read = bytes_read
        super().__init__(f"read failed after {bytes_read} bytes: {cause}")


@dataclass(frozen=True)
class Digest:
    hex: str
    algorithm: str = HASH_ALGORITHM

    def __post_init__(self):
        if len(self.hex) != 64 or self.hex.strip("0123456789abcdef"):
            raise ValueError(f"not a lowercase sha-256 hex digest: {self.hex!r}")

    @property
    def bytes(self) -> bytes:
        return bytes.fromhex(self.hex)


def hash_stream(stream: BinaryIO) -> Digest:
    """SHA-256 of a readable byte stream, in bounded-memory chunks."""
    hasher = hashlib.sha256()
    seen = 0
    while True:
        try:
            chunk = stream.read(_CHUNK_SIZE)
        except OSError as exc:
            raise HashReadError(seen, exc) from exc
        if not chunk:
            return Digest(hasher.hexdigest())
        hasher.update(chunk)
        seen += len(chunk)


def hash_file(path: str) -> Digest:
    with open(path, "rb") as fp:
        return hash_stream(fp)


@dataclass(frozen=True)
class PathFilter:
    """Include/exclude globs over absolute paths; exclusion wins.

    Globs use fnmatch semantics where ``*`` crosses path separators, so
    ``/proc/*`` excludes the whole subtree. An empty include list means
    everything is included.
    """

    include: tuple[str, ...] = ()
    exclude: tuple[str, ...] = DEFAULT_EXCLUDE_GLOBS

    def excluded(self, path: str) -> bool:
        if any(fnmatchcase(path, glob) for glob in self.exclude):
            return True
        if self.include:
            return not any(fnmatchcase(path, glob) for glob in self.include)
        return False


class HashCache:
    """Digest cache keyed by a (device, inode, size, mtime-ns) snapshot.

    Any metadata change invalidates the key, so a hit can only return
    the digest of identical-looking content. `enabled=False` turns every
    lookup into a miss (used by the soundness tests).
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.hits = 0
        self.misses = 0
        self._entries: dict[tuple[int, int, int, int], str] = {}
        self._lock = threading.Lock()

    def lookup(self, key: tuple[int, int, int, int]) -> str | None:
        with self._lock:
            if self.enabled and key in self._entries:
                self.hits += 1
                return self._entries[key]
            self.misses += 1
            return None

    def store(self, key: tuple[int, int, int, int], hex_digest: str) -> None:
        with self._lock:
            self._entries[key] = hex_digest


@dataclass(frozen=True)
class FileObservation:
    """Aggregated record of one content-version of one path.

    ``digest`` is None for unhashable paths (reason says why); those are
    counted and reported but never become Merkle leaves.
    """

    path: str
    version: int
    digest: Digest | None
    modes: frozenset
    first_pid: int
    last_pid: int
    first_ts: int
    last_ts: int
    event_count: int
    classification: str
    reason: str | None = None


@dataclass
class _Span:
    """Mutable accumulator for one version (or one unhashable record)."""

    digest: str | None
    modes: set
    first_pid: int
    last_pid: int
    first_ts: int
    last_ts: int
    count: int
    first_seq: int
    last_seq: int
    last_w_seq: int = -1
    digest_seq: int | None = None
    reason: str | None = None

    def absorb_event(self, event: BuildEvent, seq: int) -> None:
        self.modes |= _event_modes(event)
        self.last_pid = event.pid
        self.last_ts = event.ts
        self.count += 1
        self.last_seq = seq
        if "w" in _event_modes(event):
            self.last_w_seq = seq

    def absorb_span(self, other: "_Span") -> None:
        self.modes |= other.modes
        self.last_pid = other.last_pid
        self.last_ts = other.last_ts
        self.count += other.count
        self.last_seq = other.last_seq
        self.last_w_seq = max(self.last_w_seq, other.last_w_seq)


def _event_modes(event: BuildEvent) -> set:
    return {"r": {"r"}, "w": {"w"}, "rw": {"r", "w"}}[event.mode]


def _span_from_event(event: BuildEvent, seq: int, digest: str | None,
                     reason: str | None = None) -> _Span:
    return _Span(digest=digest, modes=set(_event_modes(event)),
                 first_pid=event.pid, last_pid=event.pid,
                 first_ts=event.ts, last_ts=event.ts, count=1,
                 first_seq=seq, last_seq=seq,
                 last_w_seq=seq if "w" in _event_modes(event) else -1,
                 digest_seq=seq if digest is not None else None,
                 reason=reason)


@dataclass
class _PathState:
    versions: list[_Span] = field(default_factory=list)
    gap: _Span | None = None
    read_seqs: list[int] = field(default_factory=list)
    write_seqs: list[int] = field(default_factory=list)


class ObservationStore:
    """Aggregates open events into per-(path, version) observations.

    In replay mode digests come from the events themselves; in live mode
    reads are hashed on sight (via the cache) and writes defer hashing
    to the next read or to finalize. Thread-safe for concurrent
    observe() calls; finalize() is exclusive and freezes the store.
    """

    def __init__(self, path_filter: PathFilter | None = None,
                 replay: bool = True, cache: HashCache | None = None,
                 workers: int = 1):
        self.path_filter = path_filter or PathFilter()
        self.replay = replay
        self.cache = cache or HashCache()
        self.workers = max(1, workers)
        self.hashes_computed = 0
        self.open_events = 0
        self.gap_events = 0
        self._states: dict[str, _PathState] = {}
        self._seq = 0
        self._finalized = False
        self._lock = threading.Lock()
        self._patch: dict[int, str] = {}

    # -- event intake ---------------------------------------------------

    def observe(self, event: BuildEvent, seq: int | None = None) -> None:
        if event.kind != KIND_OPEN:
            raise ValueError("observe() accepts open events only")
        with self._lock:
            if self._finalized:
                raise RuntimeError("store is finalized")
            if seq is None:
                seq = self._seq
            self._seq = max(self._seq, seq + 1)
            self.open_events += 1
            state = self._states.setdefault(event.path, _PathState())
            modes = _event_modes(event)
            if "r" in modes:
                state.read_seqs.append(seq)
            if "w" in modes:
                state.write_seqs.append(seq)

            if self.path_filter.excluded(event.path):
                self._record_gap(state, event, seq, REASON_EXCLUDED)
                return
            if self.replay:
                if event.sha256 is not None:
                    self._apply_digest(state, event, seq, event.sha256)
                elif "w" in modes:
                    self._mark_write(state, event, seq)
                else:
                    self._record_gap(state, event, seq, REASON_VANISHED)
            else:
                if "w" in modes:
                    self._mark_write(state, event, seq)
                else:
                    hex_digest, reason = self._hash_now(event.path)
                    if hex_digest is None:
                        self._record_gap(state, event, seq, reason)
                    else:
                        self._apply_digest(state, event, seq, hex_digest)

    def _record_gap(self, state: _PathState, event: BuildEvent, seq: int,
                    reason: str) -> None:
        self.gap_events += 1
        if state.gap is None:
            state.gap = _span_from_event(event, seq, None, reason)
        else:
            state.gap.absorb_event(event, seq)

    def _mark_write(self, state: _PathState, event: BuildEvent, seq: int) -> None:
        if state.versions and state.versions[-1].digest is None:
            state.versions[-1].absorb_event(event, seq)
        else:
            state.versions.append(_span_from_event(event, seq, None))

    def _apply_digest(self, state: _PathState, event: BuildEvent, seq: int,
                      hex_digest: str) -> None:
        if not state.versions:
            state.versions.append(_span_from_event(event, seq, hex_digest))
            return
        last = state.versions[-1]
        if last.digest is None:
            # A pending write resolves here. If content is back to the
            # previous version's digest the write changed nothing: fold.
            prev = state.versions[-2] if len(state.versions) > 1 else None
            if prev is not None and prev.digest == hex_digest:
                prev.absorb_span(last)
                prev.absorb_event(event, seq)
                state.versions.pop()
            else:
                last.digest = hex_digest
                last.digest_seq = seq
                last.absorb_event(event, seq)
        elif last.digest == hex_digest:
            last.absorb_event(event, seq)
        else:
            state.versions.append(_span_from_event(event, seq, hex_digest))

    def _hash_now(self, path: str) -> tuple[str | None, str | None]:
        """Stat, consult the cache, hash on miss. Returns (hex, reason)."""
        try:
            st = os.stat(path)
        except FileNotFoundError:
            return None, REASON_VANISHED
        except PermissionError:
            return None, REASON_PERMISSION
        except OSError:
            return None, REASON_VANISHED
        if not stat_mod.S_ISREG(st.st_mode):
            return None, REASON_NON_REGULAR
        key = (st.st_dev, st.st_ino, st.st_size, st.st_mtime_ns)
        cached = self.cache.lookup(key)
        if cached is not None:
            return cached, None
        try:
            digest = hash_file(path)
        except FileNotFoundError:
            return None, REASON_VANISHED
        except PermissionError:
            return None, REASON_PERMISSION
        except (OSError, HashReadError):
            return None, REASON_VANISHED
        self.hashes_computed += 1
        self.cache.store(key, digest.hex)
        return digest.hex, None

    # -- finalize -------------------------------------------------------

    @property
    def digest_patches(self) -> dict[int, str]:
        """Event seq -> hex digest, for enriching a streamed events log."""
        return dict(self._patch)

    def finalize(self) -> list[FileObservation]:
        with self._lock:
            if self._finalized:
                raise RuntimeError("store is already finalized")
            self._finalized = True
            self._resolve_pending()
            observations = []
            for path in sorted(self._states):
                state = self._states[path]
                for index, span in enumerate(state.versions):
                    observations.append(self._emit(path, index + 1, span, state))
                if state.gap is not None and not state.versions:
                    observations.append(self._emit(path, 1, state.gap, state))
            return observations

    def _resolve_pending(self) -> None:
        dirty = [path for path, state in self._states.items()
                 if state.versions and state.versions[-1].digest is None]
        dirty.sort()
        if not self.replay and dirty:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(self._hash_now, dirty))
        else:
            results = [(None, REASON_VANISHED)] * len(dirty)
        for path, (hex_digest, reason) in zip(dirty, results):
            state = self._states[path]
            pending = state.versions.pop()
            if hex_digest is None:
                self.gap_events += pending.count
                pending.reason = reason
                if state.gap is None:
                    state.gap = pending
                else:
                    state.gap.absorb_span(pending)
            else:
                prev = state.versions[-1] if state.versions else None
                if prev is not None and prev.digest == hex_digest:
                    prev.absorb_span(pending)
                else:
                    pending.digest = hex_digest
                    pending.digest_seq = pending.last_w_seq
                    state.versions.append(pending)

    def _emit(self, path: str, version: int, span: _Span,
              state: _PathState) -> FileObservation:
        if span.digest is not None and span.digest_seq is not None:
            self._patch[span.digest_seq] = span.digest
        return FileObservation(
            path=path,
            version=version,
            digest=Digest(span.digest) if span.digest is not None else None,
            modes=frozenset(span.modes),
            first_pid=span.first_pid,
            last_pid=span.last_pid,
            first_ts=span.first_ts,
            last_ts=span.last_ts,
            event_count=span.count,
            classification=self._classify(span, state),
            reason=span.reason,
        )

    @staticmethod
    def _classify(span: _Span, state: _PathState) -> str:
        if "w" in span.modes:
            # Output: written and never re-read after its last write.
            later_reads = len(state.read_seqs) - bisect_right(
                state.read_seqs, span.last_w_seq)
            return CLASS_OUTPUT if later_reads == 0 else CLASS_INTERMEDIATE
        # Input: first sighting is a read with no earlier write.
        earlier_writes = bisect_left(state.write_seqs, span.first_seq)
        return CLASS_INPUT if earlier_writes == 0 else CLASS_INTERMEDIATE

    @property
    def distinct_paths(self) -> int:
        return len(self._states)


def hashable(observations: Iterable[FileObservation]) -> list[FileObservation]:
    return [obs for obs in observations if obs.digest is not None]


def unhashable(observations: Iterable[FileObservation]) -> list[FileObservation]:
    return [obs for obs in observations if obs.digest is None]
