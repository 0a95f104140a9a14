"""Content-based Merkle tree over file observations.

The tree commits to (path, version, content digest) triples in a
canonical order, so any byte of any observed file, any rename, and any
re-versioning changes the root. Construction uses domain-separated
hashing (0x00 leaf / 0x01 interior) and splits n > 1 leaves at the
largest power of two strictly below n, which keeps inclusion proofs
unambiguous for any leaf count.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from .hashing import Digest, FileObservation, CLASS_INPUT

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

EMPTY_ROOT = hashlib.sha256(b"").hexdigest()


@dataclass(frozen=True)
class Leaf:
    path: str
    version: int
    digest_hex: str

    def key(self) -> tuple[bytes, int]:
        return (self.path.encode("utf-8"), self.version)


def leaf_hash(leaf: Leaf) -> bytes:
    hasher = hashlib.sha256()
    hasher.update(LEAF_PREFIX)
    hasher.update(leaf.path.encode("utf-8"))
    hasher.update(b"\x00")
    hasher.update(bytes.fromhex(leaf.digest_hex))
    hasher.update(struct.pack(">I", leaf.version))
    return hasher.digest()


def _node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def _split(n: int) -> int:
    """Largest power of two strictly less than n (n >= 2)."""
    return 1 << (n - 1).bit_length() - 1


@dataclass(frozen=True)
class InclusionProof:
    """Sibling path from one leaf to the root, ordered leaf-to-root."""

    index: int
    count: int
    siblings: tuple[bytes, ...]


class ProvenanceTree:
    """Immutable Merkle tree over canonically ordered leaves."""

    def __init__(self, leaves: Sequence[Leaf]):
        keys = [leaf.key() for leaf in leaves]
        if any(keys[i] >= keys[i + 1] for i in range(len(keys) - 1)):
            raise ValueError("leaves must be strictly ascending by (path, version)")
        self.leaves: tuple[Leaf, ...] = tuple(leaves)
        self._nodes: dict[tuple[int, int], bytes] = {}
        if self.leaves:
            self._subroot(0, len(self.leaves))

    @property
    def root(self) -> Digest:
        if not self.leaves:
            return Digest(EMPTY_ROOT)
        return Digest(self._subroot(0, len(self.leaves)).hex())

    def _subroot(self, lo: int, hi: int) -> bytes:
        cached = self._nodes.get((lo, hi))
        if cached is not None:
            return cached
        if hi - lo == 1:
            value = leaf_hash(self.leaves[lo])
        else:
            k = _split(hi - lo)
            value = _node_hash(self._subroot(lo, lo + k), self._subroot(lo + k, hi))
        self._nodes[(lo, hi)] = value
        return value

    def prove_inclusion(self, index: int) -> InclusionProof:
        n = len(self.leaves)
        if not 0 <= index < n:
            raise IndexError(f"leaf index {index} out of range for {n} leaves")
        siblings: list[bytes] = []
        lo, hi = 0, n
        # Walk down to the leaf, then report siblings leaf-to-root.
        path: list[tuple[int, int]] = []
        while hi - lo > 1:
            k = _split(hi - lo)
            if index < lo + k:
                path.append((lo + k, hi))
                hi = lo + k
            else:
                path.append((lo, lo + k))
                lo = lo + k
        for span in reversed(path):
            siblings.append(self._subroot(*span))
        return InclusionProof(index=index, count=n, siblings=tuple(siblings))


def compute_root(leaves: Sequence[Leaf]) -> Digest:
    return ProvenanceTree(leaves).root


def _root_from_proof(leaf_digest: bytes, index: int, n: int,
                     siblings: Sequence[bytes]) -> bytes | None:
    if n == 1:
        return leaf_digest if not siblings else None
    if not siblings:
        return None
    top, rest = siblings[-1], siblings[:-1]
    k = _split(n)
    if index < k:
        below = _root_from_proof(leaf_digest, index, k, rest)
        return None if below is None else _node_hash(below, top)
    below = _root_from_proof(leaf_digest, index - k, n - k, rest)
    return None if below is None else _node_hash(top, below)


def verify_inclusion(root: Digest | str, leaf: Leaf,
                     proof: InclusionProof) -> bool:
    """True iff the proof links this exact leaf to the given root."""
    root_hex = root.hex if isinstance(root, Digest) else root
    if proof.count < 1 or not 0 <= proof.index < proof.count:
        return False
    if any(len(s) != 32 for s in proof.siblings):
        return False
    recomputed = _root_from_proof(leaf_hash(leaf), proof.index, proof.count,
                                  proof.siblings)
    return recomputed is not None and recomputed.hex() == root_hex


@dataclass(frozen=True)
class TreeDiff:
    added: tuple[str, ...]
    removed: tuple[str, ...]
    changed: tuple[str, ...]

    @property
    def empty(self) -> bool:
        return not (self.added or self.removed or self.changed)


def _latest_digests(leaves: Iterable[Leaf]) -> dict[str, tuple[int, str]]:
    latest: dict[str, tuple[int, str]] = {}
    for leaf in leaves:
        seen = latest.get(leaf.path)
        if seen is None or leaf.version > seen[0]:
            latest[leaf.path] = (leaf.version, leaf.digest_hex)
    return latest


def diff(a: ProvenanceTree, b: ProvenanceTree) -> TreeDiff:
    """File-level delta between two builds (latest version per path)."""
    left = _latest_digests(a.leaves)
    right = _latest_digests(b.leaves)
    added = sorted(right.keys() - left.keys())
    removed = sorted(left.keys() - right.keys())
    changed = sorted(path for path in left.keys() & right.keys()
                     if left[path][1] != right[path][1])
    return TreeDiff(added=tuple(added), removed=tuple(removed),
                    changed=tuple(changed))


def leaves_from_observations(observations: Iterable[FileObservation],
                             inputs_only: bool = False) -> list[Leaf]:
    """Canonical leaf list: hashable observations, sorted by (path, version)."""
    leaves = [Leaf(obs.path, obs.version, obs.digest.hex)
              for obs in observations
              if obs.digest is not None
              and (not inputs_only or obs.classification == CLASS_INPUT)]
    leaves.sort(key=Leaf.key)
    return leaves


def proof_to_json(proof: InclusionProof) -> str:
    return json.dumps({"index": proof.index, "count": proof.count,
                       "siblings": [s.hex() for s in proof.siblings]},
                      separators=(",", ":"))


def proof_from_json(text: str) -> InclusionProof:
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise ValueError("proof must be a JSON object")
    index, count = obj.get("index"), obj.get("count")
    siblings = obj.get("siblings")
    if not isinstance(index, int) or not isinstance(count, int) \
            or not isinstance(siblings, list):
        raise ValueError("proof requires index, count, siblings")
    return InclusionProof(index=index, count=count,
                          siblings=tuple(bytes.fromhex(s) for s in siblings))
