"""bomtrace: build-provenance tracing, Merkle anchoring, and SBOM emission.

The pipeline records every file access and process execution observed
during a build, hashes the file contents it saw, commits the observations
to a content-based Merkle tree, and writes a CycloneDX SBOM whose
`bomfather:merkle_root` property anchors the whole build. Companion
verification recomputes the root from an SBOM's own components and diffs
builds at file granularity.
"""

TOOL_NAME = "bomtrace"
__version__ = "0.1.0"

from .errors import (  # noqa: E402,F401
    BomtraceError,
    EventFormatError,
    MalformedLogError,
    SbomConstructionError,
    SbomParseError,
    TracingPermissionError,
    TracingUnsupportedError,
    UnverifiableDocumentError,
)
