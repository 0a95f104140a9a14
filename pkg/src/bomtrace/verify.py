"""Independent verification of SBOM root claims and build-level diffing.

Verification never trusts the embedded root: it reconstructs the leaf
set from the document's own hashable components, recomputes the Merkle
root, and compares. Unhashable components are excluded from the
recomputation but counted, so they cannot silently influence the
verdict.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UnverifiableDocumentError
from .merkle import Leaf, ProvenanceTree, compute_root, diff as tree_diff
from .process_tree import COMMAND_PROPERTY_PREFIX
from .sbom import SbomComponent, SbomDocument

VERDICT_MATCH = "match"
VERDICT_MISMATCH = "mismatch"
VERDICT_UNVERIFIABLE = "unverifiable"


@dataclass(frozen=True)
class VerificationReport:
    claimed_root: str | None
    recomputed_root: str
    verdict: str
    total_components: int
    hashable_components: int
    unhashable_components: int
    expected_root: str | None = None
    discrepancies: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "claimed_root": self.claimed_root,
            "recomputed_root": self.recomputed_root,
            "expected_root": self.expected_root,
            "components": {
                "total": self.total_components,
                "hashable": self.hashable_components,
                "unhashable": self.unhashable_components,
            },
            "discrepancies": list(self.discrepancies),
        }


def document_leaves(document: SbomDocument) -> list[Leaf]:
    """Leaf set reconstructed from the document's hashable components."""
    leaves = []
    for comp in document.components:
        if comp.is_traced_file and comp.digest_hex is not None:
            leaves.append(Leaf(comp.path, comp.version, comp.digest_hex))
    leaves.sort(key=Leaf.key)
    return leaves


def _hashable(comp: SbomComponent) -> bool:
    return comp.is_traced_file and comp.digest_hex is not None


def verify_document(document: SbomDocument,
                    expected_root: str | None = None) -> VerificationReport:
    """Recompute the root from components and judge the document's claim."""
    leaves = document_leaves(document)
    recomputed = compute_root(leaves).hex
    claimed = document.merkle_root
    if document.foreign or claimed is None:
        verdict = VERDICT_UNVERIFIABLE
    elif claimed == recomputed and expected_root in (None, recomputed):
        verdict = VERDICT_MATCH
    else:
        verdict = VERDICT_MISMATCH
    total = len(document.components)
    hashable = sum(1 for c in document.components if _hashable(c))
    return VerificationReport(
        claimed_root=claimed,
        recomputed_root=recomputed,
        verdict=verdict,
        total_components=total,
        hashable_components=hashable,
        unhashable_components=total - hashable,
        expected_root=expected_root,
    )


@dataclass(frozen=True)
class DocumentDiff:
    root_a: str
    root_b: str
    added: tuple[str, ...]
    removed: tuple[str, ...]
    changed: tuple[str, ...]
    commands_only_in_a: tuple[tuple[str, str], ...]
    commands_only_in_b: tuple[tuple[str, str], ...]

    @property
    def identical(self) -> bool:
        return self.root_a == self.root_b

    def to_dict(self) -> dict:
        return {
            "identical": self.identical,
            "root_a": self.root_a,
            "root_b": self.root_b,
            "added": list(self.added),
            "removed": list(self.removed),
            "changed": list(self.changed),
            "commands_only_in_a": [list(c) for c in self.commands_only_in_a],
            "commands_only_in_b": [list(c) for c in self.commands_only_in_b],
        }


def _commands(document: SbomDocument) -> set[tuple[str, str]]:
    return {(p.name, p.value) for p in document.properties
            if p.name.startswith(COMMAND_PROPERTY_PREFIX)}


def diff_documents(a: SbomDocument, b: SbomDocument) -> DocumentDiff:
    """File- and command-level delta between two verifiable documents."""
    for name, doc in (("first", a), ("second", b)):
        if doc.foreign or doc.merkle_root is None:
            raise UnverifiableDocumentError(
                f"{name} document has no merkle root and cannot be diffed")
    tree_a = ProvenanceTree(document_leaves(a))
    tree_b = ProvenanceTree(document_leaves(b))
    delta = tree_diff(tree_a, tree_b)
    commands_a, commands_b = _commands(a), _commands(b)
    return DocumentDiff(
        root_a=tree_a.root.hex,
        root_b=tree_b.root.hex,
        added=delta.added,
        removed=delta.removed,
        changed=delta.changed,
        commands_only_in_a=tuple(sorted(commands_a - commands_b)),
        commands_only_in_b=tuple(sorted(commands_b - commands_a)),
    )


def render_report_text(report: VerificationReport) -> str:
    lines = [
        f"verdict:         {report.verdict}",
        f"claimed root:    {report.claimed_root or '(absent)'}",
        f"recomputed root: {report.recomputed_root}",
    ]
    if report.expected_root is not None:
        lines.append(f"expected root:   {report.expected_root}")
    lines.append(
        f"components:      {report.total_components} total, "
        f"{report.hashable_components} hashable, "
        f"{report.unhashable_components} unhashable")
    for path in report.discrepancies:
        lines.append(f"discrepancy:     {path}")
    return "\n".join(lines) + "\n"


def render_diff_text(delta: DocumentDiff) -> str:
    lines = [
        f"roots: {'identical' if delta.identical else 'differ'}",
        f"  a: {delta.root_a}",
        f"  b: {delta.root_b}",
    ]
    for label, paths in (("added", delta.added), ("removed", delta.removed),
                         ("changed", delta.changed)):
        lines.append(f"{label}: {len(paths)}")
        for path in paths:
            lines.append(f"  {path}")
    for label, commands in (("commands only in a", delta.commands_only_in_a),
                            ("commands only in b", delta.commands_only_in_b)):
        lines.append(f"{label}: {len(commands)}")
        for name, _ in commands:
            lines.append(f"  {name}")
    return "\n".join(lines) + "\n"
