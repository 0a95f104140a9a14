"""CycloneDX document assembly, deterministic emission, and parsing.

Components carry the `bomfather:` name prefix and property namespace;
the document anchors everything with a `bomfather:merkle_root` property
whose value must equal the root recomputed from the document's own
hashable components. Emission is byte-deterministic: fixed key order,
two-space indent, LF endings, canonical component ordering, and a
serial number derived from the Merkle root rather than drawn at random.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field
from typing import Iterable, Mapping
from urllib.parse import quote, unquote

from . import TOOL_NAME, __version__
from .errors import SbomConstructionError, SbomParseError
from .events import LogHeader
from .hashing import HASH_ALGORITHM, FileObservation
from .merkle import Leaf, compute_root
from .process_tree import ProcessTree

SPEC_VERSION = "1.5"
NAME_PREFIX = "bomfather:"

PROP_PID = "bomfather:pid"
PROP_VERSION = "bomfather:version"
PROP_MERKLE_ROOT = "bomfather:merkle_root"
PROP_DROPPED = "bomfather:dropped_events"
STATS_PREFIX = "bomfather:stats:"

# Fixed namespace for root-derived serial numbers; never change it, or
# re-emission of an identical build would change its URN.
_SERIAL_NAMESPACE = uuid.uuid5(uuid.NAMESPACE_URL, "bomtrace:serial-number")


@dataclass(frozen=True)
class Property:
    name: str
    value: str


@dataclass(frozen=True)
class SbomComponent:
    """One file component; digest is None for unhashable observations."""

    name: str
    digest_hex: str | None = None
    purl: str | None = None
    properties: tuple[Property, ...] = ()

    @property
    def path(self) -> str:
        return self.name[len(NAME_PREFIX):]

    @property
    def is_traced_file(self) -> bool:
        return self.name.startswith(NAME_PREFIX + "/")

    def property_value(self, name: str) -> str | None:
        for prop in self.properties:
            if prop.name == name:
                return prop.value
        return None

    @property
    def version(self) -> int:
        value = self.property_value(PROP_VERSION)
        return int(value) if value is not None else 1


@dataclass(frozen=True)
class SbomDocument:
    serial_number: str
    timestamp: str
    components: tuple[SbomComponent, ...]
    properties: tuple[Property, ...]
    tool_name: str = TOOL_NAME
    tool_version: str = __version__
    spec_version: str = SPEC_VERSION
    foreign: bool = field(default=False, compare=True)

    def property_value(self, name: str) -> str | None:
        for prop in self.properties:
            if prop.name == name:
                return prop.value
        return None

    @property
    def merkle_root(self) -> str | None:
        return self.property_value(PROP_MERKLE_ROOT)


def make_purl(basename: str, digest_hex: str) -> str:
    encoded = quote(basename, safe="")
    return f"pkg:generic/{encoded}?checksum=sha256%3A{digest_hex}"


def purl_for(observation: FileObservation) -> str | None:
    """Package URL for a hashable observation; None if the basename is empty."""
    if observation.digest is None:
        raise ValueError("pURLs exist only for hashable observations")
    basename = observation.path.rsplit("/", 1)[-1]
    if not basename:
        return None
    return make_purl(basename, observation.digest.hex)


def parse_purl(purl: str) -> tuple[str, str, dict[str, str]]:
    """Split a pURL into (type, decoded name, qualifiers)."""
    if not purl.startswith("pkg:"):
        raise ValueError(f"not a pURL: {purl!r}")
    remainder = purl[len("pkg:"):]
    qualifiers: dict[str, str] = {}
    if "?" in remainder:
        remainder, query = remainder.split("?", 1)
        for pair in query.split("&"):
            if not pair:
                continue
            key, _, value = pair.partition("=")
            qualifiers[unquote(key)] = unquote(value)
    if "/" not in remainder:
        raise ValueError(f"pURL missing name: {purl!r}")
    ptype, name = remainder.split("/", 1)
    return ptype, unquote(name), qualifiers


def serial_number_for_root(root_hex: str) -> str:
    return f"urn:uuid:{uuid.uuid5(_SERIAL_NAMESPACE, root_hex)}"


def build_document(observations: Iterable[FileObservation], tree,
                   process_tree: ProcessTree, stats: Mapping[str, int],
                   header: LogHeader, dropped: int = 0) -> SbomDocument:
    """Assemble the document; refuses observation/tree disagreement.

    `observations` must be exactly the set the tree was built from
    (hashable ones) plus any unhashable records.
    """
    observations = sorted(observations, key=lambda o: (o.path, o.version))
    leaves = [Leaf(o.path, o.version, o.digest.hex)
              for o in observations if o.digest is not None]
    recomputed = compute_root(leaves).hex
    root_hex = tree.root.hex
    if recomputed != root_hex:
        raise SbomConstructionError(
            f"tree root {root_hex} does not match observations "
            f"(recomputed {recomputed})")

    components = []
    for obs in observations:
        props = [Property(PROP_PID, str(obs.first_pid))]
        if obs.version > 1:
            props.append(Property(PROP_VERSION, str(obs.version)))
        components.append(SbomComponent(
            name=f"{NAME_PREFIX}{obs.path}",
            digest_hex=obs.digest.hex if obs.digest is not None else None,
            purl=purl_for(obs) if obs.digest is not None else None,
            properties=tuple(props),
        ))
    components.sort(key=lambda c: (c.name, c.version))

    doc_props = [Property(name, value)
                 for name, value in process_tree.command_properties()]
    if dropped > 0:
        doc_props.append(Property(PROP_DROPPED, str(dropped)))
    doc_props.append(Property(PROP_MERKLE_ROOT, root_hex))
    for key in sorted(stats):
        doc_props.append(Property(f"{STATS_PREFIX}{key}", str(stats[key])))

    return SbomDocument(
        serial_number=serial_number_for_root(root_hex),
        timestamp=header.started,
        components=tuple(components),
        properties=tuple(doc_props),
    )


def emit(document: SbomDocument) -> bytes:
    """Byte-deterministic CycloneDX JSON (2-space indent, LF, fixed order)."""
    components = []
    for comp in document.components:
        obj: dict = {"type": "file", "name": comp.name}
        if comp.digest_hex is not None:
            obj["hashes"] = [{"alg": HASH_ALGORITHM, "content": comp.digest_hex}]
        if comp.purl is not None:
            obj["purl"] = comp.purl
        obj["properties"] = [{"name": p.name, "value": p.value}
                             for p in comp.properties]
        components.append(obj)
    doc = {
        "bomFormat": "CycloneDX",
        "specVersion": document.spec_version,
        "serialNumber": document.serial_number,
        "version": 1,
        "metadata": {
            "timestamp": document.timestamp,
            "tools": {
                "components": [{
                    "type": "application",
                    "name": document.tool_name,
                    "version": document.tool_version,
                }],
            },
        },
        "components": components,
        "properties": [{"name": p.name, "value": p.value}
                       for p in document.properties],
    }
    return (json.dumps(doc, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def _is_hex_digest(value) -> bool:
    return (isinstance(value, str) and len(value) == 64
            and not value.strip("0123456789abcdef"))


def parse(data: bytes | str) -> SbomDocument:
    """Parse an emitted (or shape-compatible foreign) document.

    Documents without the `bomfather:merkle_root` property parse with
    the foreign flag set and cannot be verified.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SbomParseError(f"invalid JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(obj, dict):
        raise SbomParseError("document must be a JSON object")
    if obj.get("bomFormat") != "CycloneDX":
        raise SbomParseError(f"not a CycloneDX document: "
                             f"bomFormat={obj.get('bomFormat')!r}")
    spec_version = obj.get("specVersion")
    if not isinstance(spec_version, str):
        raise SbomParseError("specVersion missing")

    metadata = obj.get("metadata") or {}
    tools = metadata.get("tools") or {}
    tool_name, tool_version = "", ""
    tool_components = tools.get("components") if isinstance(tools, dict) else tools
    if isinstance(tool_components, list) and tool_components:
        first = tool_components[0]
        if isinstance(first, dict):
            tool_name = first.get("name", "")
            tool_version = first.get("version", "")

    components = []
    for raw in obj.get("components") or []:
        if not isinstance(raw, dict) or not isinstance(raw.get("name"), str):
            raise SbomParseError("component without a string name")
        digest_hex = None
        for entry in raw.get("hashes") or []:
            if (isinstance(entry, dict) and entry.get("alg") == HASH_ALGORITHM
                    and _is_hex_digest(entry.get("content"))):
                digest_hex = entry["content"]
                break
        props = tuple(Property(p["name"], p["value"])
                      for p in raw.get("properties") or []
                      if isinstance(p, dict)
                      and isinstance(p.get("name"), str)
                      and isinstance(p.get("value"), str))
        components.append(SbomComponent(name=raw["name"], digest_hex=digest_hex,
                                        purl=raw.get("purl"), properties=props))

    doc_props = tuple(Property(p["name"], p["value"])
                      for p in obj.get("properties") or []
                      if isinstance(p, dict)
                      and isinstance(p.get("name"), str)
                      and isinstance(p.get("value"), str))
    document = SbomDocument(
        serial_number=obj.get("serialNumber", ""),
        timestamp=metadata.get("timestamp", ""),
        components=tuple(components),
        properties=doc_props,
        tool_name=tool_name,
        tool_version=tool_version,
        spec_version=spec_version,
        foreign=not any(p.name == PROP_MERKLE_ROOT for p in doc_props),
    )
    return document
