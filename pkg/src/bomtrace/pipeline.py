"""Shared trace/replay pipeline: event stream in, SBOM document out."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

from .events import (
    KIND_DROP,
    KIND_EXEC,
    KIND_OPEN,
    BuildEvent,
    LogHeader,
)
from .hashing import (
    CLASS_INPUT,
    FileObservation,
    HashCache,
    ObservationStore,
    PathFilter,
)
from .merkle import ProvenanceTree, leaves_from_observations
from .process_tree import (
    DEFAULT_REDACT_PATTERNS,
    ProcessTree,
    RedactionPolicy,
)
from .sbom import SbomDocument, build_document


@dataclass
class PipelineConfig:
    include: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ()
    redact: bool = True
    redact_patterns: tuple[str, ...] = DEFAULT_REDACT_PATTERNS
    inputs_only: bool = False
    workers: int = 1
    replay: bool = True

    def path_filter(self) -> PathFilter:
        base = PathFilter()
        return PathFilter(include=tuple(self.include),
                          exclude=base.exclude + tuple(self.exclude))

    def redaction_policy(self) -> RedactionPolicy:
        # --no-redact restores verbatim capture, empty entries included.
        if not self.redact:
            return RedactionPolicy(patterns=(), enabled=False, keep_empty=True)
        return RedactionPolicy(patterns=tuple(self.redact_patterns))


@dataclass
class PipelineResult:
    header: LogHeader
    observations: list[FileObservation]
    tree: ProvenanceTree
    process_tree: ProcessTree
    document: SbomDocument
    stats: dict[str, int]
    dropped: int
    total_events: int
    digest_patches: dict[int, str] = field(default_factory=dict)


def run_pipeline(source: Iterable[BuildEvent], header: LogHeader,
                 config: PipelineConfig,
                 event_sink: Callable[[int, BuildEvent], None] | None = None,
                 ) -> PipelineResult:
    """Drive one build's event stream through hashing, tree, and SBOM.

    `event_sink` receives (seq, event) for every event, before
    processing; the trace command uses it to stream the events log.
    """
    store = ObservationStore(path_filter=config.path_filter(),
                             replay=config.replay, cache=HashCache(),
                             workers=config.workers)
    ptree = ProcessTree(policy=config.redaction_policy())
    total_events = 0
    open_events = 0
    exec_events = 0
    dropped = 0
    for seq, event in enumerate(source):
        if event_sink is not None:
            event_sink(seq, event)
        total_events += 1
        if event.kind == KIND_OPEN:
            open_events += 1
            store.observe(event, seq=seq)
        elif event.kind == KIND_DROP:
            dropped += event.dropped
        else:
            if event.kind == KIND_EXEC:
                exec_events += 1
            ptree.ingest(event)

    observations = store.finalize()
    if config.inputs_only:
        kept = [o for o in observations
                if o.digest is None or o.classification == CLASS_INPUT]
    else:
        kept = list(observations)
    tree = ProvenanceTree(leaves_from_observations(kept))

    stats = {
        "total_events": total_events,
        "open_events": open_events,
        "exec_events": exec_events,
        "distinct_files": store.distinct_paths,
        "components_hashable": sum(1 for o in kept if o.digest is not None),
        "components_unhashable": sum(1 for o in kept if o.digest is None),
        "orphan_attributed": sum(
            1 for o in kept if ptree.resolve(o.first_pid) is None),
    }
    document = build_document(kept, tree, ptree, stats, header,
                              dropped=dropped)
    return PipelineResult(
        header=header,
        observations=kept,
        tree=tree,
        process_tree=ptree,
        document=document,
        stats=stats,
        dropped=dropped,
        total_events=total_events,
        digest_patches=store.digest_patches,
    )
