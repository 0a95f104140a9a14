"""CycloneDX 1.5 schema validation helper (jsonschema + official schema)."""

import json
from functools import lru_cache
from pathlib import Path

import jsonschema
from referencing import Registry, Resource

SCHEMA_DIR = Path(__file__).parent / "fixtures" / "schema"


@lru_cache(maxsize=1)
def cyclonedx_validator():
    bom = json.loads((SCHEMA_DIR / "bom-1.5.SNAPSHOT.schema.json").read_text())
    spdx = json.loads((SCHEMA_DIR / "spdx.SNAPSHOT.schema.json").read_text())
    jsf = json.loads((SCHEMA_DIR / "jsf-0.82.SNAPSHOT.schema.json").read_text())
    registry = Registry().with_resources([
        ("spdx.SNAPSHOT.schema.json", Resource.from_contents(spdx)),
        ("jsf-0.82.SNAPSHOT.schema.json", Resource.from_contents(jsf)),
        ("http://cyclonedx.org/schema/bom-1.5.schema.json",
         Resource.from_contents(bom)),
    ])
    return jsonschema.Draft7Validator(bom, registry=registry)


def schema_violations(document_bytes: bytes) -> list[str]:
    doc = json.loads(document_bytes)
    return [f"{list(e.path)}: {e.message}"
            for e in cyclonedx_validator().iter_errors(doc)]
