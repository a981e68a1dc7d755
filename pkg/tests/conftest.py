import contextlib
import io
import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from prefixpm import cli, fixtures  # noqa: E402


class Result:
    def __init__(self, code, out, err):
        self.code, self.out, self.err = code, out, err

    def __repr__(self):
        return f"Result(code={self.code}, out={self.out!r}, err={self.err!r})"


def run_pm(*args, env=None):
    """Run the CLI in-process and capture its streams."""
    out, err = io.StringIO(), io.StringIO()
    saved = dict(os.environ)
    if env is not None:
        os.environ.clear()
        os.environ.update(env)
    else:
        os.environ.pop("EPREFIX", None)
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            code = cli.main([str(a) for a in args])
    finally:
        os.environ.clear()
        os.environ.update(saved)
    return Result(code, out.getvalue(), err.getvalue())


@pytest.fixture
def pm():
    return run_pm


@pytest.fixture
def native_cfg(tmp_path):
    return fixtures.install_config(tmp_path / "cfg", "native")


@pytest.fixture
def k1om_cfg(tmp_path):
    return fixtures.install_config(tmp_path / "cfg", "k1om")


@pytest.fixture
def root(tmp_path):
    r = tmp_path / "root"
    r.mkdir()
    return r


def drop_user_patch(cfg, subdir, name="libffi-3.2.1-k1om.patch"):
    dest = Path(cfg) / "etc" / "pm" / "patches" / "dev-libs" / subdir
    dest.mkdir(parents=True, exist_ok=True)
    (dest / name).write_bytes((fixtures.PATCHES / name).read_bytes())
    return dest / name


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with whatever detail the test recorded."""
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py::test_criterion_" not in rep.nodeid:
                continue
            name = rep.nodeid.split("::test_criterion_")[1]
            detail = dict(rep.user_properties).get("detail", "")
            rows.append((name, outcome, detail))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in sorted(rows):
        num, _, label = name.partition("_")
        line = f"criterion {int(num):2d} {label:<22} {'PASS' if outcome == 'passed' else 'FAIL'}"
        terminalreporter.write_line(f"{line}  {detail}".rstrip())
