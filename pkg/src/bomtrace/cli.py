"""Command-line surface: trace, replay, verify, diff, proof, stats.

Exit codes: 0 ok/match, 1 internal error, 2 usage or named thing not
found, 3 tracing unavailable (privilege or kernel support), 4 malformed
input (event log, SBOM bytes, proof), 5 verification mismatch, 6
unverifiable document, 7 diff found differences. `trace` propagates the
root command's exit status instead.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import IO

from . import TOOL_NAME, __version__
from .capture import LiveSource
from .errors import (
    BomtraceError,
    MalformedLogError,
    SbomParseError,
    TracingPermissionError,
    TracingUnsupportedError,
    UnverifiableDocumentError,
)
from .events import (
    KIND_DROP,
    KIND_OPEN,
    BuildEvent,
    LogHeader,
    LogSummary,
    ReplaySource,
    serialize_event,
    serialize_header,
    serialize_summary,
)
from .merkle import ProvenanceTree, proof_from_json, proof_to_json, verify_inclusion, Leaf
from .pipeline import PipelineConfig, run_pipeline
from .process_tree import DEFAULT_REDACT_PATTERNS
from .sbom import SbomDocument, emit, parse
from .verify import (
    VERDICT_MATCH,
    VERDICT_UNVERIFIABLE,
    diff_documents,
    document_leaves,
    render_diff_text,
    render_report_text,
    verify_document,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_TRACING = 3
EXIT_BAD_INPUT = 4
EXIT_MISMATCH = 5
EXIT_UNVERIFIABLE = 6
EXIT_DIFFERS = 7

log = logging.getLogger(TOOL_NAME)


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write-to-temp then rename, so consumers never see partial output."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fp:
        fp.write(data)
    os.replace(tmp, path)


class EventLogWriter:
    """Streams raw event lines during the build, then rewrites enriched.

    The streamed file is crash evidence: it is flushed line by line and
    survives abrupt termination. On success, finalize() atomically
    replaces it with the same events enriched with the digests the
    hashing stage computed, plus the closing summary line.
    """

    def __init__(self, path: str, header: LogHeader):
        self.path = path
        self.header = header
        self._events: list[BuildEvent] = []
        self._fp: IO[str] = open(path, "w", encoding="utf-8", newline="\n")
        self._fp.write(serialize_header(header) + "\n")
        self._fp.flush()

    def write(self, seq: int, event: BuildEvent) -> None:
        assert seq == len(self._events)
        self._events.append(event)
        self._fp.write(serialize_event(event) + "\n")
        self._fp.flush()

    def finalize(self, digest_patches: dict[int, str]) -> None:
        self._fp.close()
        dropped = sum(e.dropped or 0 for e in self._events
                      if e.kind == KIND_DROP)
        lines = [serialize_header(self.header)]
        for seq, event in enumerate(self._events):
            patch = digest_patches.get(seq)
            if patch is not None and event.sha256 is None:
                event = event.with_sha256(patch)
            lines.append(serialize_event(event))
        lines.append(serialize_summary(
            LogSummary(events=len(self._events), dropped=dropped)))
        atomic_write_bytes(self.path, ("\n".join(lines) + "\n").encode("utf-8"))

    def abort(self) -> None:
        self._fp.close()
        if os.path.exists(self.path):
            os.unlink(self.path)


def _pipeline_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--include", action="append", default=[], metavar="GLOB",
                     help="only hash paths matching GLOB (repeatable)")
    sub.add_argument("--exclude", action="append", default=[], metavar="GLOB",
                     help="never hash paths matching GLOB (repeatable; "
                          "exclusion wins over inclusion)")
    sub.add_argument("--no-redact", action="store_true",
                     help="capture environments verbatim, no redaction")
    sub.add_argument("--redact-pattern", action="append", default=[],
                     metavar="P", help="redact env keys containing P "
                     "(repeatable; replaces the default pattern set)")
    sub.add_argument("--inputs-only", action="store_true",
                     help="commit only input-classified files to the tree")
    sub.add_argument("--workers", type=int, default=1,
                     help="hashing worker threads (default 1)")


def _pipeline_config(args: argparse.Namespace, replay: bool) -> PipelineConfig:
    return PipelineConfig(
        include=tuple(args.include),
        exclude=tuple(args.exclude),
        redact=not args.no_redact,
        redact_patterns=tuple(args.redact_pattern) or DEFAULT_REDACT_PATTERNS,
        inputs_only=args.inputs_only,
        workers=args.workers,
        replay=replay,
    )


def _load_document(path: str) -> SbomDocument:
    with open(path, "rb") as fp:
        return parse(fp.read())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Kernel-level build provenance: trace builds, emit "
                    "Merkle-anchored SBOMs, verify and diff them.")
    parser.add_argument("--version", action="version",
                        version=f"{TOOL_NAME} {__version__}")
    commands = parser.add_subparsers(dest="cmd", required=True)

    trace = commands.add_parser("trace", help="run and trace a build command")
    trace.add_argument("--out", required=True, help="SBOM output path")
    trace.add_argument("--events-out", required=True,
                       help="events log output path")
    trace.add_argument("--capture-cmd", default=None,
                       help="capture helper command (default: "
                            "$BOMTRACE_CAPTURE_CMD)")
    _pipeline_args(trace)
    trace.add_argument("command", nargs=argparse.REMAINDER,
                       metavar="-- COMMAND [ARG...]")
    trace.set_defaults(func=cmd_trace)

    replay = commands.add_parser("replay",
                                 help="rebuild an SBOM from an events log")
    replay.add_argument("--events", required=True, help="events log to replay")
    replay.add_argument("--out", required=True, help="SBOM output path")
    _pipeline_args(replay)
    replay.set_defaults(func=cmd_replay)

    verify = commands.add_parser("verify",
                                 help="recompute and check an SBOM's root")
    verify.add_argument("sbom", help="SBOM document path")
    verify.add_argument("--expected-root", metavar="HEX", default=None)
    verify.add_argument("--format", choices=("text", "json"), default="text")
    verify.set_defaults(func=cmd_verify)

    diff = commands.add_parser("diff", help="compare two SBOMs at file level")
    diff.add_argument("sbom_a")
    diff.add_argument("sbom_b")
    diff.add_argument("--format", choices=("text", "json"), default="text")
    diff.set_defaults(func=cmd_diff)

    proof = commands.add_parser("proof",
                                help="emit an inclusion proof for one file")
    proof.add_argument("sbom", help="SBOM document path")
    proof.add_argument("path", help="component file path")
    proof.add_argument("--file-version", type=int, default=None,
                       help="content version (default: latest)")
    proof.set_defaults(func=cmd_proof)

    pverify = commands.add_parser("proof-verify",
                                  help="check an inclusion proof against a root")
    pverify.add_argument("--root", required=True, metavar="HEX")
    pverify.add_argument("--path", required=True)
    pverify.add_argument("--sha256", required=True, metavar="HEX")
    pverify.add_argument("--file-version", type=int, default=1)
    pverify.add_argument("--proof", required=True,
                         help="proof JSON path, or - for stdin")
    pverify.set_defaults(func=cmd_proof_verify)

    stats = commands.add_parser("stats",
                                help="summarize an events log")
    stats.add_argument("events", help="events log path")
    stats.add_argument("--format", choices=("text", "json"), default="text")
    stats.set_defaults(func=cmd_stats)
    return parser


def cmd_trace(args: argparse.Namespace) -> int:
    command = list(args.command)
    if command and command[0] == "--":
        command = command[1:]
    if not command:
        print("trace: no command given (use -- COMMAND)", file=sys.stderr)
        return EXIT_USAGE
    capture = tuple(args.capture_cmd.split()) if args.capture_cmd else None
    source = LiveSource(tuple(command), capture)
    writer = EventLogWriter(args.events_out, source.header)
    try:
        result = run_pipeline(source, source.header,
                              _pipeline_config(args, replay=False),
                              event_sink=writer.write)
    except (TracingPermissionError, TracingUnsupportedError):
        writer.abort()
        raise
    writer.finalize(result.digest_patches)
    atomic_write_bytes(args.out, emit(result.document))
    if result.dropped:
        log.warning("%d events were dropped by the kernel transport; "
                    "the SBOM may be incomplete", result.dropped)
        print(f"warning: {result.dropped} events dropped", file=sys.stderr)
    return source.returncode or 0


def cmd_replay(args: argparse.Namespace) -> int:
    source = ReplaySource(args.events)
    result = run_pipeline(source, source.header,
                          _pipeline_config(args, replay=True))
    atomic_write_bytes(args.out, emit(result.document))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    expected = args.expected_root
    if expected is not None and (len(expected) != 64
                                 or expected.strip("0123456789abcdef")):
        print("verify: --expected-root must be 64 lowercase hex chars",
              file=sys.stderr)
        return EXIT_USAGE
    report = verify_document(_load_document(args.sbom), expected_root=expected)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(render_report_text(report), end="")
    if report.verdict == VERDICT_MATCH:
        return EXIT_OK
    if report.verdict == VERDICT_UNVERIFIABLE:
        return EXIT_UNVERIFIABLE
    return EXIT_MISMATCH


def cmd_diff(args: argparse.Namespace) -> int:
    delta = diff_documents(_load_document(args.sbom_a),
                           _load_document(args.sbom_b))
    if args.format == "json":
        print(json.dumps(delta.to_dict(), indent=2))
    else:
        print(render_diff_text(delta), end="")
    return EXIT_OK if delta.identical else EXIT_DIFFERS


def cmd_proof(args: argparse.Namespace) -> int:
    document = _load_document(args.sbom)
    leaves = document_leaves(document)
    candidates = [i for i, leaf in enumerate(leaves) if leaf.path == args.path]
    if args.file_version is not None:
        candidates = [i for i in candidates
                      if leaves[i].version == args.file_version]
    if not candidates:
        print(f"proof: no hashable component for {args.path!r}",
              file=sys.stderr)
        return EXIT_USAGE
    index = max(candidates, key=lambda i: leaves[i].version)
    tree = ProvenanceTree(leaves)
    print(proof_to_json(tree.prove_inclusion(index)))
    return EXIT_OK


def cmd_proof_verify(args: argparse.Namespace) -> int:
    for name, value in (("--root", args.root), ("--sha256", args.sha256)):
        if len(value) != 64 or value.strip("0123456789abcdef"):
            print(f"proof-verify: {name} must be 64 lowercase hex chars",
                  file=sys.stderr)
            return EXIT_USAGE
    if args.proof == "-":
        text = sys.stdin.read()
    else:
        with open(args.proof, "r", encoding="utf-8") as fp:
            text = fp.read()
    try:
        proof = proof_from_json(text)
    except ValueError as exc:
        raise SbomParseError(f"invalid proof: {exc}") from exc
    leaf = Leaf(args.path, args.file_version, args.sha256)
    if verify_inclusion(args.root, leaf, proof):
        print("proof: valid")
        return EXIT_OK
    print("proof: INVALID")
    return EXIT_MISMATCH


def _extension(path: str) -> str:
    basename = path.rsplit("/", 1)[-1]
    dot = basename.rfind(".")
    return basename[dot:] if dot > 0 else "(none)"


def cmd_stats(args: argparse.Namespace) -> int:
    source = ReplaySource(args.events)
    total = 0
    opens = 0
    dropped = 0
    files_by_ext: dict[str, set] = {}
    distinct: set = set()
    for event in source:
        total += 1
        if event.kind == KIND_OPEN:
            opens += 1
            distinct.add(event.path)
            files_by_ext.setdefault(_extension(event.path), set()).add(event.path)
        elif event.kind == KIND_DROP:
            dropped += event.dropped
    by_ext = {ext: len(paths) for ext, paths in files_by_ext.items()}
    ordered = sorted(by_ext.items(), key=lambda kv: (-kv[1], kv[0]))
    if args.format == "json":
        print(json.dumps({
            "total_events": total,
            "open_events": opens,
            "distinct_files": len(distinct),
            "by_extension": dict(ordered),
            "dropped": dropped,
        }, indent=2))
    else:
        print(f"total file access events: {opens}")
        print(f"distinct files: {len(distinct)}")
        for ext, count in ordered:
            print(f"  {ext}: {count}")
        print(f"dropped events: {dropped}")
        print(f"total events: {total}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("BOMTRACE_LOG", "warning").upper()
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, level, logging.WARNING),
                        format="%(name)s: %(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except MalformedLogError as exc:
        print(f"{TOOL_NAME}: malformed log: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except SbomParseError as exc:
        print(f"{TOOL_NAME}: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except TracingPermissionError as exc:
        print(f"{TOOL_NAME}: tracing denied: {exc}", file=sys.stderr)
        return EXIT_TRACING
    except TracingUnsupportedError as exc:
        print(f"{TOOL_NAME}: tracing unavailable: {exc}", file=sys.stderr)
        return EXIT_TRACING
    except UnverifiableDocumentError as exc:
        print(f"{TOOL_NAME}: {exc}", file=sys.stderr)
        return EXIT_UNVERIFIABLE
    except FileNotFoundError as exc:
        print(f"{TOOL_NAME}: not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except BomtraceError as exc:
        print(f"{TOOL_NAME}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"{TOOL_NAME}: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
