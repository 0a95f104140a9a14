import contextlib
import io
import json
import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


def run_cli(args, stdin_text=None):
    """Invoke the CLI in-process. Returns (exit_code, stdout, stderr)."""
    from bomtrace.cli import main

    stdout, stderr = io.StringIO(), io.StringIO()
    stack = contextlib.ExitStack()
    with stack:
        stack.enter_context(contextlib.redirect_stdout(stdout))
        stack.enter_context(contextlib.redirect_stderr(stderr))
        if stdin_text is not None:
            stack.enter_context(_patched_stdin(stdin_text))
        code = main([str(a) for a in args])
    return code, stdout.getvalue(), stderr.getvalue()


@contextlib.contextmanager
def _patched_stdin(text):
    old = sys.stdin
    sys.stdin = io.StringIO(text)
    try:
        yield
    finally:
        sys.stdin = old


def replay_document(log_path, *extra_args, tmp_path=None):
    """Replay a log via the CLI and return the parsed JSON document."""
    out = Path(tmp_path or log_path.parent) / "out.sbom.json"
    code, _, err = run_cli(["replay", "--events", log_path, "--out", out,
                            *extra_args])
    assert code == 0, err
    return json.loads(out.read_text()), out
