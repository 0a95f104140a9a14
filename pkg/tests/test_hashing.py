import hashlib
import io
import random

import pytest

from bomtrace.events import BuildEvent
from bomtrace.hashing import (
    CLASS_INPUT,
    CLASS_INTERMEDIATE,
    CLASS_OUTPUT,
    REASON_EXCLUDED,
    REASON_NON_REGULAR,
    REASON_VANISHED,
    Digest,
    HashCache,
    HashReadError,
    ObservationStore,
    PathFilter,
    hash_stream,
)

from reference_sha256 import sha256_hex

EMPTY_SHA = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
ABC_SHA = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


class TestHashStream:
    def test_fips_vectors(self):
        assert hash_stream(io.BytesIO(b"")).hex == EMPTY_SHA
        assert hash_stream(io.BytesIO(b"abc")).hex == ABC_SHA

    def test_against_reference_oracle(self):
        rng = random.Random(11)
        for _ in range(25):
            data = rng.randbytes(rng.randrange(0, 4096))
            assert hash_stream(io.BytesIO(data)).hex == sha256_hex(data)

    def test_large_input_deterministic(self):
        data = bytes(1 << 20)
        first = hash_stream(io.BytesIO(data))
        second = hash_stream(io.BytesIO(data))
        assert first == second
        assert first.hex == hashlib.sha256(data).hexdigest()

    def test_read_failure_reports_bytes_read(self):
        class Flaky:
            def __init__(self):
                self.calls = 0

            def read(self, n):
                self.calls += 1
                if self.calls == 1:
                    return b"x" * 100
                raise OSError("disk gone")

        with pytest.raises(HashReadError) as err:
            hash_stream(Flaky())
        assert err.value.bytes_read == 100


def test_digest_validation():
    with pytest.raises(ValueError):
        Digest("abc")
    with pytest.raises(ValueError):
        Digest("G" * 64)
    assert Digest(EMPTY_SHA).bytes == bytes.fromhex(EMPTY_SHA)


class TestPathFilter:
    def test_defaults_exclude_pseudo_filesystems(self):
        f = PathFilter()
        assert f.excluded("/proc/self/maps")
        assert f.excluded("/sys/devices/cpu")
        assert f.excluded("/dev/null")
        assert not f.excluded("/usr/lib/libc.so")

    def test_exclusion_wins_over_inclusion(self):
        f = PathFilter(include=("/src/*",), exclude=("/src/secret/*",))
        assert not f.excluded("/src/main.c")
        assert f.excluded("/src/secret/key.pem")
        assert f.excluded("/other/file")  # not included


def _open(ts, path, mode, sha=None, pid=9):
    return BuildEvent(ts=ts, kind="open", pid=pid, comm="cc", path=path,
                      mode=mode, sha256=sha)


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


class TestReplayStore:
    def test_repeat_reads_fold_into_one_version(self):
        store = ObservationStore()
        store.observe(_open(1, "/src/a.c", "r", _sha("v1"), pid=5))
        store.observe(_open(2, "/src/a.c", "r", _sha("v1"), pid=6))
        (obs,) = store.finalize()
        assert obs.version == 1 and obs.event_count == 2
        assert obs.first_pid == 5 and obs.last_pid == 6
        assert obs.first_ts == 1 and obs.last_ts == 2

    def test_digest_change_appends_version(self):
        store = ObservationStore()
        store.observe(_open(1, "/src/a.c", "r", _sha("v1")))
        store.observe(_open(2, "/src/a.c", "w", _sha("v2")))
        first, second = store.finalize()
        assert (first.version, second.version) == (1, 2)
        assert first.digest.hex == _sha("v1")
        assert second.digest.hex == _sha("v2")

    def test_consecutive_version_digests_differ(self):
        store = ObservationStore()
        for i, text in enumerate(["a", "b", "a", "a", "c"]):
            store.observe(_open(i, "/f", "r", _sha(text)))
        observations = store.finalize()
        digests = [o.digest.hex for o in observations]
        assert len(observations) == 4  # a, b, a, c -- the repeat folds
        assert all(x != y for x, y in zip(digests, digests[1:]))
        assert [o.version for o in observations] == [1, 2, 3, 4]

    def test_excluded_path_is_unhashable_not_leaf(self):
        store = ObservationStore()
        store.observe(_open(1, "/proc/self/maps", "r", _sha("x")))
        (obs,) = store.finalize()
        assert obs.digest is None and obs.reason == REASON_EXCLUDED

    def test_read_without_digest_is_vanished(self):
        store = ObservationStore()
        store.observe(_open(1, "/tmp/gone.tmp", "r"))
        (obs,) = store.finalize()
        assert obs.digest is None and obs.reason == REASON_VANISHED

    def test_pending_write_resolved_by_later_read(self):
        store = ObservationStore()
        store.observe(_open(1, "/out.o", "w"))
        store.observe(_open(2, "/out.o", "r", _sha("obj")))
        (obs,) = store.finalize()
        assert obs.digest.hex == _sha("obj")
        assert obs.event_count == 2 and obs.modes == frozenset({"r", "w"})

    def test_pending_write_never_resolved_degrades(self):
        store = ObservationStore()
        store.observe(_open(1, "/out.o", "w"))
        (obs,) = store.finalize()
        assert obs.digest is None and obs.reason == REASON_VANISHED

    def test_rewrite_with_same_content_collapses(self):
        store = ObservationStore()
        store.observe(_open(1, "/cfg", "r", _sha("same")))
        store.observe(_open(2, "/cfg", "w"))
        store.observe(_open(3, "/cfg", "r", _sha("same")))
        (obs,) = store.finalize()
        assert obs.version == 1 and obs.event_count == 3
        assert obs.modes == frozenset({"r", "w"})

    def test_finalize_sorts_by_path_then_version(self):
        store = ObservationStore()
        store.observe(_open(1, "/b", "r", _sha("b")))
        store.observe(_open(2, "/a", "r", _sha("a1")))
        store.observe(_open(3, "/a", "r", _sha("a2")))
        observations = store.finalize()
        assert [(o.path, o.version) for o in observations] == \
            [("/a", 1), ("/a", 2), ("/b", 1)]

    def test_empty_store(self):
        assert ObservationStore().finalize() == []

    def test_store_frozen_after_finalize(self):
        store = ObservationStore()
        store.finalize()
        with pytest.raises(RuntimeError):
            store.observe(_open(1, "/a", "r", _sha("a")))
        with pytest.raises(RuntimeError):
            store.finalize()

    def test_replay_determinism(self, fixtures):
        from bomtrace.events import ReplaySource

        def run():
            store = ObservationStore()
            for seq, event in enumerate(
                    ReplaySource(str(fixtures / "synthetic_2000.jsonl"))):
                if event.kind == "open":
                    store.observe(event, seq=seq)
            return store.finalize()

        assert run() == run()


class TestClassification:
    def test_input_output_intermediate(self):
        store = ObservationStore()
        store.observe(_open(1, "/in.c", "r", _sha("in")))
        store.observe(_open(2, "/tmp.o", "w", _sha("tmp")))
        store.observe(_open(3, "/tmp.o", "r", _sha("tmp")))
        store.observe(_open(4, "/out", "w", _sha("out")))
        by_path = {o.path: o for o in store.finalize()}
        assert by_path["/in.c"].classification == CLASS_INPUT
        assert by_path["/tmp.o"].classification == CLASS_INTERMEDIATE
        assert by_path["/out"].classification == CLASS_OUTPUT

    def test_read_after_prior_write_is_intermediate(self):
        store = ObservationStore()
        store.observe(_open(1, "/f", "w", _sha("w1")))
        store.observe(_open(2, "/f", "r", _sha("other")))  # changed outside
        first, second = store.finalize()
        # the path was re-read after its write, so neither version is output
        assert first.classification == CLASS_INTERMEDIATE
        assert second.classification == CLASS_INTERMEDIATE


class TestLiveStore:
    def test_cache_counters_on_unchanged_file(self, tmp_path):
        target = tmp_path / "a.c"
        target.write_text("content")
        store = ObservationStore(replay=False)
        store.observe(_open(1, str(target), "r"))
        store.observe(_open(2, str(target), "r"))
        (obs,) = store.finalize()
        assert obs.version == 1 and obs.event_count == 2
        assert store.hashes_computed == 1
        assert store.cache.misses == 1 and store.cache.hits == 1
        assert obs.digest.hex == hashlib.sha256(b"content").hexdigest()

    def test_cache_soundness_against_disabled_cache(self, tmp_path):
        files = []
        for i in range(8):
            f = tmp_path / f"f{i}.txt"
            f.write_text(f"body {i}")
            files.append(str(f))

        def digests(enabled):
            store = ObservationStore(replay=False,
                                     cache=HashCache(enabled=enabled))
            ts = 0
            for _ in range(3):
                for path in files:
                    store.observe(_open(ts, path, "r"))
                    ts += 1
            return [(o.path, o.digest.hex) for o in store.finalize()]

        assert digests(True) == digests(False)

    def test_dirty_path_rehashed_at_finalize(self, tmp_path):
        target = tmp_path / "out.bin"
        store = ObservationStore(replay=False)
        store.observe(_open(1, str(target), "w"))
        target.write_bytes(b"final content")  # build writes after open
        (obs,) = store.finalize()
        assert obs.digest.hex == hashlib.sha256(b"final content").hexdigest()
        assert obs.classification == CLASS_OUTPUT
        # enrichment patch lands on the write event's sequence number
        assert store.digest_patches == {0: obs.digest.hex}

    def test_vanished_file_downgrades(self, tmp_path):
        store = ObservationStore(replay=False)
        store.observe(_open(1, str(tmp_path / "never-existed"), "r"))
        (obs,) = store.finalize()
        assert obs.digest is None and obs.reason == REASON_VANISHED

    def test_non_regular_file_downgrades(self, tmp_path):
        store = ObservationStore(replay=False)
        store.observe(_open(1, str(tmp_path), "r"))  # a directory
        (obs,) = store.finalize()
        assert obs.digest is None and obs.reason == REASON_NON_REGULAR

    def test_worker_count_does_not_change_results(self, tmp_path):
        paths = []
        for i in range(40):
            f = tmp_path / f"w{i}.dat"
            f.write_bytes(bytes([i]) * (i + 1))
            paths.append(str(f))

        def run(workers):
            store = ObservationStore(replay=False, workers=workers)
            for ts, path in enumerate(paths):
                store.observe(_open(ts, path, "w"))
            return store.finalize()

        assert run(1) == run(4)
