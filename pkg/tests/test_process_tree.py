import pytest
from hypothesis import given, strategies as st

from bomtrace.events import BuildEvent, ReplaySource
from bomtrace.process_tree import (
    ProcessTree,
    RedactionPolicy,
    redact,
)


def _fork(ts, pid, ppid, comm="sh"):
    return BuildEvent(ts=ts, kind="fork", pid=pid, ppid=ppid, comm=comm)


def _exec(ts, pid, ppid, comm, argv, env=()):
    return BuildEvent(ts=ts, kind="exec", pid=pid, ppid=ppid, comm=comm,
                      argv=tuple(argv), env=tuple(env))


def _exit(ts, pid, comm="sh"):
    return BuildEvent(ts=ts, kind="exit", pid=pid, comm=comm)


class TestIngest:
    def test_fork_then_exec_builds_record(self):
        tree = ProcessTree()
        tree.ingest(_fork(0, 100, 99))
        tree.ingest(_fork(1, 101, 100))
        tree.ingest(_exec(2, 101, 100, "cc", ["cc", "-c", "a.c"]))
        record = tree.resolve(101)
        assert record.argv == ("cc", "-c", "a.c")
        assert record.comm == "cc" and record.execed

    def test_pid_reuse_creates_second_record(self):
        tree = ProcessTree()
        tree.ingest(_fork(0, 101, 50))
        tree.ingest(_exit(1, 101))
        tree.ingest(_fork(2, 101, 60))
        tree.ingest(_exit(3, 101))
        records = [r for r in tree.records() if r.pid == 101]
        assert len(records) == 2
        assert [r.start_ts for r in records] == [0, 2]
        assert records[0].exit_ts == 1 and records[1].exit_ts == 3

    def test_exec_for_unknown_pid_is_orphan(self):
        tree = ProcessTree()
        tree.ingest(_fork(0, 100, 99))
        tree.ingest(_exec(1, 999, 998, "ghost", ["ghost"]))
        record = tree.resolve(999)
        assert record.orphan and record.execed

    def test_exit_for_unknown_pid_is_orphan(self):
        tree = ProcessTree()
        tree.ingest(_fork(0, 100, 99))
        tree.ingest(_exit(1, 777))
        assert tree.resolve(777).orphan
        assert tree.orphan_count == 1

    def test_first_record_is_root_not_orphan(self):
        tree = ProcessTree()
        tree.ingest(_fork(0, 100, 99))  # parent 99 was never seen
        assert not tree.resolve(100).orphan

    def test_fork_child_inherits_parent_comm(self):
        tree = ProcessTree()
        tree.ingest(_fork(0, 100, 99, comm="make"))
        tree.ingest(BuildEvent(ts=1, kind="fork", pid=101, ppid=100, comm=""))
        assert tree.resolve(101).comm == "make"

    def test_double_ingest_yields_identical_trees(self, fixtures):
        def build():
            tree = ProcessTree()
            for event in ReplaySource(str(fixtures / "synthetic_2000.jsonl")):
                if event.kind in ("fork", "exec", "exit"):
                    tree.ingest(event)
            return [(r.pid, r.start_ts, r.comm, r.argv, r.env, r.exit_ts,
                     r.orphan, r.execed) for r in tree.records()]

        assert build() == build()


class TestRedact:
    def test_default_policy_examples(self):
        policy = RedactionPolicy()
        assert redact(["API_TOKEN=abc", "PATH=/usr/bin"], policy) == \
            ["API_TOKEN=[REDACTED]", "PATH=/usr/bin"]
        assert redact([], policy) == []
        assert redact(["MY_PASSWORD_FILE=/run/s"], policy) == \
            ["MY_PASSWORD_FILE=[REDACTED]"]

    def test_case_insensitive_and_no_equals_passthrough(self):
        policy = RedactionPolicy()
        assert redact(["secret_Key=x", "justtext"], policy) == \
            ["secret_Key=[REDACTED]", "justtext"]

    def test_disabled_policy_passes_through(self):
        policy = RedactionPolicy(patterns=(), enabled=False)
        env = ["TOKEN=t", ""]
        assert redact(env, policy) == env

    def test_enabled_policy_requires_patterns(self):
        with pytest.raises(ValueError):
            RedactionPolicy(patterns=(), enabled=True)

    @given(st.lists(st.text(max_size=20)))
    def test_redact_is_idempotent(self, env):
        policy = RedactionPolicy()
        once = redact(env, policy)
        assert redact(once, policy) == once


class TestCommandProperties:
    def test_paper_style_property_name(self):
        tree = ProcessTree()
        tree.ingest(_fork(0, 81530, 81529, comm="runc:[2:INIT]"))
        tree.ingest(_exec(1, 81530, 81529, "runc:[2:INIT]", ["./make.bash"],
                          ["GOPATH=/go"]))
        ((name, value),) = tree.command_properties()
        assert name == "bomfather:command:pid=81530"
        assert value == "runc:[2:INIT] ./make.bash\nEnv: GOPATH=/go"

    def test_empty_env_value_ends_with_env_marker(self):
        tree = ProcessTree()
        tree.ingest(_exec(0, 10, 9, "cc", ["cc"], []))
        ((_, value),) = tree.command_properties()
        assert value.endswith("Env: ")

    def test_same_start_ts_tie_broken_by_pid(self):
        tree = ProcessTree()
        tree.ingest(_exec(5, 30, 1, "b", ["b"]))
        tree.ingest(_exec(5, 20, 1, "a", ["a"]))
        names = [name for name, _ in tree.command_properties()]
        assert names == ["bomfather:command:pid=20", "bomfather:command:pid=30"]

    def test_empty_env_entries_dropped_by_default(self):
        tree = ProcessTree()
        tree.ingest(_exec(0, 10, 9, "cc", ["cc"], ["A=1", "", "B=2"]))
        assert tree.resolve(10).env == ("A=1", "B=2")

    def test_verbatim_env_preserved_when_redaction_off(self):
        tree = ProcessTree(RedactionPolicy(patterns=(), enabled=False,
                                           keep_empty=True))
        tree.ingest(_exec(0, 10, 9, "cc", ["cc"], ["TOKEN=t", "", ""]))
        assert tree.resolve(10).env == ("TOKEN=t", "", "")

    def test_exec_overwrites_previous_exec(self):
        tree = ProcessTree()
        tree.ingest(_fork(0, 10, 9))
        tree.ingest(_exec(1, 10, 9, "sh", ["sh", "-c", "x"]))
        tree.ingest(_exec(2, 10, 9, "cc", ["cc", "a.c"]))
        props = tree.command_properties()
        assert len(props) == 1
        assert "cc a.c" in props[0][1]
