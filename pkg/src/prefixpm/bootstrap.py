"""Three-stage prefix bootstrap and the ``startprefix`` entry script.

Stage 1 installs the package manager runtime with the host toolchain,
stage 2 builds the toy compiler (and, in RAP mode, the toy libc) with the
host toolchain, and stage 3 rebuilds the whole system set with the
compiler from stage 2. ``<prefix>/.bootstrap-stage`` records the last
completed stage so an interrupted run picks up where it stopped.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import shlex
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import fixtures
from .atoms import parse_atom
from .buildengine import execute_plan
from .config import DEFAULT_CBUILD, Config, load_config
from .errors import BootstrapError, FormatError, PMError
from .interp import inspect_machine
from .repository import Repository, load_repositories
from .resolver import solve
from .util import atomic_write, file_lock
from .vdb import EmptyVdb, Vdb

log = logging.getLogger(__name__)

MARKER = ".bootstrap-stage"
LOCK = ".bootstrap.lock"
HOST_TOOLCHAIN = "host-cc"
BOOTSTRAP_TOOLCHAIN = "toy-cc"
RUNTIME = "sys-apps/pm-runtime"
COMPILER = "sys-devel/toy-cc"
LIBC = "sys-libs/toy-libc"


@dataclass(frozen=True)
class Stage:
    number: int
    atoms: tuple[str, ...]
    toolchain: str  # "host" | "bootstrapped"


@dataclass(frozen=True)
class BootstrapPlan:
    prefix_path: Path
    stages: tuple[Stage, ...]
    rap_mode: bool = False


@dataclass
class BootstrapReport:
    prefix_path: Path
    completed: list[int] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)
    installed: list[str] = field(default_factory=list)
    finished: bool = False


def read_stage(prefix) -> int:
    marker = Path(prefix) / MARKER
    if not marker.exists():
        return 0
    text = marker.read_text(encoding="ascii").strip()
    if text not in ("1", "2", "3"):
        raise FormatError(f"{marker}: bad stage marker {text!r}")
    return int(text)


def plan_bootstrap(prefix_path, rap_mode: bool = False, system_set=None) -> BootstrapPlan:
    prefix = Path(prefix_path).resolve()
    if prefix.exists():
        if not prefix.is_dir():
            raise BootstrapError(f"{prefix} exists and is not a directory")
        if os.listdir(prefix) and not (prefix / MARKER).exists():
            raise BootstrapError(f"refusing to bootstrap into non-empty {prefix}")
    atoms = tuple(str(a) for a in (system_set or fixtures.SYSTEM_SET))
    stage2 = (COMPILER, LIBC) if rap_mode else (COMPILER,)
    return BootstrapPlan(prefix, (
        Stage(1, (RUNTIME,), "host"),
        Stage(2, stage2, "host"),
        Stage(3, atoms, "bootstrapped"),
    ), rap_mode)


def _make_conf(prefix: Path, host: Config | None) -> str:
    cbuild = host.cbuild if host else DEFAULT_CBUILD
    lines = [
        f'CBUILD="{cbuild}"',
        f'CHOST="{cbuild}"',
        f'CC="{BOOTSTRAP_TOOLCHAIN}"',
        'ACCEPT_KEYWORDS="amd64-linux"',
        'CFLAGS="-O2 -pipe"',
        'CXXFLAGS="${CFLAGS}"',
        'FEATURES="collision-protect"',
        f'PM_TMPDIR="{prefix}/var/tmp/pm"',
        f'DISTDIR="{prefix}/var/cache/distfiles"',
    ]
    return "\n".join(lines) + "\n"


def _stage_config(config: Config, stage: Stage) -> Config:
    if stage.toolchain == "host":
        return dataclasses.replace(config, vars={**config.vars, "CC": HOST_TOOLCHAIN})
    return config


def execute_bootstrap(plan: BootstrapPlan, repos: list[Repository] | None = None,
                      host_config: Config | None = None, stop_after: int | None = None,
                      confirm=None) -> BootstrapReport:
    prefix = plan.prefix_path
    prefix.mkdir(parents=True, exist_ok=True)
    report = BootstrapReport(prefix)
    lock = prefix / LOCK
    with file_lock(lock):
        done = read_stage(prefix)
        pm_dir = prefix / "etc" / "pm"
        if done == 0:
            tree_paths = [(r.name, r.path, r.priority) for r in repos] if repos else [
                ("main", fixtures.TREE, 0)]
            atomic_write(pm_dir / "make.conf", _make_conf(prefix, host_config))
            atomic_write(pm_dir / "repos.conf",
                         "".join(f"{n} = {p} {prio}\n" for n, p, prio in tree_paths))
        config = load_config(prefix, root="/", eprefix=str(prefix))
        repos = repos or load_repositories(prefix)
        vdb = Vdb("/", str(prefix))
        vdb.init()

        for stage in plan.stages:
            if stage.number <= done:
                report.skipped.append(stage.number)
                continue
            if confirm is not None and not confirm(stage):
                log.info("stopping before stage %d at user request", stage.number)
                break
            if stage.toolchain == "bootstrapped":
                _check_compiler(prefix, config)
            cfg = _stage_config(config, stage)
            targets = [parse_atom(a) for a in stage.atoms]
            try:
                build_plan = solve(targets, cfg, EmptyVdb(), vdb, repos,
                                   reinstall_targets=True)
                entries = execute_plan(build_plan, cfg, vdb)
            except PMError as e:
                raise BootstrapError(f"stage {stage.number} failed: {e}") from e
            report.installed.extend(e.id.cpv for e in entries)
            atomic_write(prefix / MARKER, f"{stage.number}\n")
            report.completed.append(stage.number)
            log.info("stage %d complete", stage.number)
            if stop_after is not None and stage.number >= stop_after:
                break

        if read_stage(prefix) == 3:
            write_startprefix(prefix)
            report.finished = True
    lock.unlink(missing_ok=True)
    return report


def _check_compiler(prefix: Path, config: Config):
    compiler = prefix / "usr" / "bin" / BOOTSTRAP_TOOLCHAIN
    if not compiler.exists():
        raise BootstrapError(f"stage 3 needs {compiler}, which stage 2 did not install")
    machine = inspect_machine(compiler)
    if machine != config.cbuild:
        raise BootstrapError(f"{compiler} targets {machine}, expected {config.cbuild}")


STARTPREFIX = """\
#!/bin/sh
# Opens a shell inside the bootstrapped prefix.
EPREFIX={prefix}
export EPREFIX
PATH="$EPREFIX/usr/bin:$EPREFIX/bin:$PATH"
export PATH
PM_PYTHON="${{PM_PYTHON:-{python}}}"
export PM_PYTHON
echo "Entering Prefix $EPREFIX"
if [ -t 0 ]; then
    exec "${{SHELL:-/bin/sh}}" -i "$@"
fi
exec /bin/sh -s "$@"
"""


def write_startprefix(prefix_path) -> Path:
    prefix = Path(prefix_path)
    if read_stage(prefix) < 3:
        raise BootstrapError(f"bootstrap of {prefix} is incomplete; no startprefix yet")
    script = prefix / "startprefix"
    atomic_write(script, STARTPREFIX.format(prefix=shlex.quote(str(prefix)),
                                            python=sys.executable), mode=0o755)
    return script
