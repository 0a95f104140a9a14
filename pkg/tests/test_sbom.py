import hashlib
import json

import pytest

from bomtrace.errors import SbomConstructionError, SbomParseError
from bomtrace.events import LogHeader, ReplaySource
from bomtrace.hashing import Digest, FileObservation
from bomtrace.merkle import EMPTY_ROOT, ProvenanceTree, leaves_from_observations
from bomtrace.pipeline import PipelineConfig, run_pipeline
from bomtrace.process_tree import ProcessTree
from bomtrace.sbom import (
    build_document,
    emit,
    make_purl,
    parse,
    parse_purl,
    purl_for,
    serial_number_for_root,
)

from schema_util import schema_violations

EMPTY_SHA = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
SUPPORTED_GO_SHA = ("fe8b88d8b412ba7119e6f37a00415faec9923b7f379561330dadfb475"
                    "8b43c4b")
HEADER = LogHeader(started="2026-01-05T10:00:00Z", tool="bomtrace/0.1.0")


def _obs(path, hexdigest, pid=1, version=1, classification="input"):
    return FileObservation(path=path, version=version,
                           digest=Digest(hexdigest) if hexdigest else None,
                           modes=frozenset({"r"}), first_pid=pid, last_pid=pid,
                           first_ts=0, last_ts=0, event_count=1,
                           classification=classification,
                           reason=None if hexdigest else "vanished")


class TestPurl:
    def test_paper_example(self):
        obs = _obs("/go-source/src/internal/platform/supported.go",
                   SUPPORTED_GO_SHA)
        assert purl_for(obs) == (
            "pkg:generic/supported.go?checksum=sha256%3A" + SUPPORTED_GO_SHA)

    def test_space_percent_encoded(self):
        assert make_purl("a b.c", "00" * 32) == \
            "pkg:generic/a%20b.c?checksum=sha256%3A" + "00" * 32

    def test_empty_file_digest_qualifier(self):
        digest = hashlib.sha256(b"").hexdigest()
        purl = make_purl("x", digest)
        assert purl.endswith("checksum=sha256%3A" + EMPTY_SHA)
        assert digest == EMPTY_SHA

    def test_round_trip_through_parser(self):
        for basename in ("supported.go", "a b.c", "weird#name?.c", "100%.go"):
            purl = make_purl(basename, "ab" * 32)
            ptype, name, qualifiers = parse_purl(purl)
            assert ptype == "generic"
            assert name == basename
            assert qualifiers == {"checksum": "sha256:" + "ab" * 32}

    def test_trailing_slash_path_has_no_purl(self):
        obs = _obs("/srv/dir", "ab" * 32)
        object.__setattr__(obs, "path", "/srv/dir/")
        assert purl_for(obs) is None


def _build(observations, **kwargs):
    tree = ProvenanceTree(leaves_from_observations(observations))
    return build_document(observations, tree, ProcessTree(),
                          kwargs.pop("stats", {"total_events": 0}), HEADER,
                          **kwargs)


class TestBuildDocument:
    def test_empty_build(self):
        doc = _build([])
        assert doc.components == ()
        assert doc.merkle_root == EMPTY_SHA == EMPTY_ROOT

    def test_component_shape_for_paper_entry(self):
        doc = _build([_obs("/go-source/src/internal/platform/supported.go",
                           SUPPORTED_GO_SHA, pid=93844)])
        (comp,) = doc.components
        assert comp.name == \
            "bomfather:/go-source/src/internal/platform/supported.go"
        assert comp.digest_hex == SUPPORTED_GO_SHA
        assert comp.property_value("bomfather:pid") == "93844"

    def test_version_property_only_above_one(self):
        doc = _build([_obs("/f", "11" * 32, version=1),
                      _obs("/f", "22" * 32, version=2)])
        first, second = doc.components
        assert first.property_value("bomfather:version") is None
        assert second.property_value("bomfather:version") == "2"

    def test_unhashable_component_has_no_hash_or_purl(self):
        doc = _build([_obs("/gone", None)])
        (comp,) = doc.components
        assert comp.digest_hex is None and comp.purl is None

    def test_mismatched_tree_refused(self):
        wrong_tree = ProvenanceTree(
            leaves_from_observations([_obs("/other", "33" * 32)]))
        with pytest.raises(SbomConstructionError):
            build_document([_obs("/f", "11" * 32)], wrong_tree, ProcessTree(),
                           {}, HEADER)

    def test_serial_number_deterministic_in_root(self):
        assert serial_number_for_root("aa" * 32) == \
            serial_number_for_root("aa" * 32)
        assert serial_number_for_root("aa" * 32) != \
            serial_number_for_root("bb" * 32)
        doc_a, doc_b = _build([_obs("/f", "11" * 32)]), \
            _build([_obs("/f", "11" * 32)])
        assert doc_a.serial_number == doc_b.serial_number

    def test_dropped_property_only_when_nonzero(self):
        assert _build([]).property_value("bomfather:dropped_events") is None
        doc = _build([], dropped=4)
        assert doc.property_value("bomfather:dropped_events") == "4"


class TestEmit:
    def test_emit_twice_byte_identical(self):
        doc = _build([_obs("/f", "11" * 32)])
        assert emit(doc) == emit(doc)

    def test_lf_endings_and_trailing_newline(self):
        data = emit(_build([]))
        assert b"\r" not in data and data.endswith(b"\n")

    def test_components_sorted_by_name_then_version(self):
        doc = _build([_obs("/b", "11" * 32), _obs("/a", "22" * 32, version=1),
                      _obs("/a", "33" * 32, version=2)])
        names = [(c.name, c.version) for c in doc.components]
        assert names == [("bomfather:/a", 1), ("bomfather:/a", 2),
                         ("bomfather:/b", 1)]

    def test_schema_conformance(self):
        doc = _build([_obs("/f", "11" * 32), _obs("/gone", None)], dropped=2)
        assert schema_violations(emit(doc)) == []

    def test_golden_fixture_schema_conformance(self, fixtures):
        for golden in ("golden_small_sbom.json", "golden_paper_sbom.json"):
            assert schema_violations((fixtures / golden).read_bytes()) == []


class TestParse:
    def test_round_trip_identity(self):
        doc = _build([_obs("/f", "11" * 32, pid=3),
                      _obs("/f", "22" * 32, pid=3, version=2),
                      _obs("/gone", None)], dropped=1)
        assert parse(emit(doc)) == doc

    def test_round_trip_on_pipeline_output(self, fixtures):
        source = ReplaySource(str(fixtures / "small_12.jsonl"))
        result = run_pipeline(source, source.header, PipelineConfig())
        assert parse(emit(result.document)) == result.document

    def test_foreign_document_flagged(self):
        foreign = json.dumps({
            "bomFormat": "CycloneDX",
            "specVersion": "1.5",
            "components": [{"type": "library", "name": "leftpad",
                            "version": "1.0.0"}],
        })
        doc = parse(foreign)
        assert doc.foreign

    def test_truncated_bytes_report_offset(self):
        data = emit(_build([_obs("/f", "11" * 32)]))
        with pytest.raises(SbomParseError) as err:
            parse(data[:100])
        assert err.value.offset is not None
        assert "byte offset" in str(err.value)

    def test_non_cyclonedx_rejected(self):
        with pytest.raises(SbomParseError, match="bomFormat"):
            parse(json.dumps({"spdxVersion": "SPDX-2.3"}))

    def test_components_without_prefix_are_not_leaves(self):
        from bomtrace.verify import document_leaves
        foreign = json.dumps({
            "bomFormat": "CycloneDX", "specVersion": "1.5",
            "components": [
                {"type": "file", "name": "bomfather:/real",
                 "hashes": [{"alg": "SHA-256", "content": "11" * 32}]},
                {"type": "file", "name": "unrelated",
                 "hashes": [{"alg": "SHA-256", "content": "22" * 32}]},
            ],
            "properties": [{"name": "bomfather:merkle_root", "value": "x"}],
        })
        leaves = document_leaves(parse(foreign))
        assert [l.path for l in leaves] == ["/real"]
