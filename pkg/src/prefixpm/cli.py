"""``pm`` command line.

Exit codes: 0 success, 2 parse/usage/format errors, 3 resolution errors,
4 build errors, 5 merge collisions. Plans and query results go to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import fixtures
from .atoms import Atom, parse_atom
from .bootstrap import execute_bootstrap, plan_bootstrap
from .buildengine import execute_plan, unmerge
from .config import compute_use, load_config
from .errors import FormatError, ParseError, PMError, ResolutionError
from .interp import inspect_machine
from .repository import (DEFAULT_OVERLAY_PRIORITY, add_overlay, best_match, load_repositories,
                         resolve_category)
from .resolver import changed_use_rebuilds, expand_dependencies, solve
from .selection import load_modules, resolve_provider, select_list, select_set
from .util import join_root, normalize_eprefix
from .vdb import EmptyVdb, Vdb

log = logging.getLogger("prefixpm")


class UsageError(PMError):
    exit_code = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--root", help="target filesystem receiving installs")
    p.add_argument("--config-root", dest="config_root",
                   help="directory whose etc/pm configures this run")
    p.add_argument("--prefix", help="installation offset inside the root")
    p.add_argument("--pretend", action="store_true", help="print the plan, change nothing")
    p.add_argument("--changed-use", dest="changed_use", action="store_true",
                   help="also rebuild installed packages whose configuration changed")
    p.add_argument("--interactive", action="store_true", help="ask before each bootstrap stage")
    p.add_argument("--libc", action="store_true", help="bootstrap a C library too (RAP mode)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pm", description="Miniature source-based package manager.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("merge", help="resolve, build and install atoms")
    _common(p)
    p.add_argument("atoms", nargs="*")

    p = sub.add_parser("unmerge", help="remove installed packages")
    _common(p)
    p.add_argument("atoms", nargs="+")

    p = sub.add_parser("query", help="inspect the tree and installed packages")
    _common(p)
    p.add_argument("what", help="depgraph | installed | owns")
    p.add_argument("args", nargs="*")

    p = sub.add_parser("inspect", help="print the target machine of a built object")
    _common(p)
    p.add_argument("path")

    p = sub.add_parser("bootstrap", help="bootstrap a fresh prefix")
    _common(p)

    p = sub.add_parser("overlay", help="manage overlays")
    _common(p)
    p.add_argument("action", choices=("add", "list"))
    p.add_argument("args", nargs="*", help="add: <name> <path> [priority]")

    p = sub.add_parser("select", help="pick the active provider of a slotted module")
    _common(p)
    p.add_argument("action", choices=("list", "set", "show"))
    p.add_argument("module")
    p.add_argument("provider", nargs="?")
    return parser


class Context:
    """Resolved root/config-root/prefix triple for one invocation."""

    def __init__(self, args, need_root=True):
        ambient = os.environ.get("EPREFIX")
        if args.root:
            root = args.root
        elif ambient:
            root = "/"
        elif need_root:
            raise UsageError("--root is required outside a prefix session")
        else:
            root = "/"
        if args.prefix:
            prefix = args.prefix
        elif ambient and not args.root:
            prefix = ambient
        else:
            prefix = "/"
        self.root = Path(root).resolve()
        self.eprefix = normalize_eprefix(prefix) or "/"
        if args.config_root:
            self.config_root = Path(args.config_root).resolve()
        else:
            self.config_root = join_root(self.root, self.eprefix)
        self.ambient = ambient

    def config(self):
        return load_config(self.config_root, self.root, self.eprefix)

    def vdb(self):
        return Vdb(self.root, self.eprefix)

    def host_vdb(self):
        if self.ambient:
            host = Vdb("/", self.ambient)
            if host.prefix_dir != self.vdb().prefix_dir:
                return host
        return EmptyVdb()

    def repos(self):
        return load_repositories(self.config_root)


def _expand_targets(tokens, vdb: Vdb) -> list[Atom]:
    atoms = []
    for tok in tokens:
        if tok == "@world":
            atoms.extend(vdb.world())
        elif tok == "@system":
            atoms.extend(parse_atom(a) for a in fixtures.SYSTEM_SET)
        elif tok.startswith("@"):
            raise ParseError(f"unknown set {tok!r}")
        else:
            atoms.append(parse_atom(tok))
    return atoms


def cmd_merge(args) -> int:
    ctx = Context(args)
    config = ctx.config()
    repos = ctx.repos()
    vdb = ctx.vdb()
    targets = _expand_targets(args.atoms, vdb)
    rebuild = changed_use_rebuilds(config, vdb, repos) if args.changed_use else []
    if not targets and not rebuild and not args.changed_use:
        raise UsageError("nothing to merge")
    plan = solve(targets, config, ctx.host_vdb(), vdb, repos, rebuild=rebuild)
    sys.stdout.write(plan.render())
    sys.stdout.flush()
    if args.pretend or not plan.actions:
        return 0
    vdb.init()
    execute_plan(plan, config, vdb,
                 progress=lambda a: log.info(">>> building %s (%s)", a.id.cpv, a.reason))
    return 0


def cmd_unmerge(args) -> int:
    ctx = Context(args)
    vdb = ctx.vdb()
    victims = []
    for tok in args.atoms:
        atom = parse_atom(tok)
        matches = vdb.match(atom)
        if not matches:
            raise ResolutionError(f"{tok} matches no installed package")
        victims.extend(matches)
    for entry in victims:
        print(f"unmerge {entry.id}")
        if not args.pretend:
            for path in unmerge(entry.id, vdb, ctx.root):
                log.info("<<< %s", path)
    return 0


def _depgraph(atom: Atom, config, repos, out):
    seen = set()

    def visit(recipe, depth, label):
        pkg = recipe.id
        line = f"{'  ' * depth}{label}{pkg.cpv}:{pkg.slot}"
        if pkg.cpv in seen:
            out.append(line + " (seen)")
            return
        seen.add(pkg.cpv)
        use = compute_use(config, recipe)
        out.append(f'{line} USE="{use}"')
        kinds = expand_dependencies(recipe, use)
        for kind, atoms in zip(("depend", "rdepend", "pdepend"), kinds):
            for dep in atoms:
                child = best_match(resolve_category(dep, repos), repos, config.accept_keywords)
                visit(child, depth + 1, f"[{kind}] ")

    visit(best_match(resolve_category(atom, repos), repos, config.accept_keywords), 0, "")


def cmd_query(args) -> int:
    if args.what == "depgraph":
        if len(args.args) != 1:
            raise UsageError("usage: pm query depgraph <atom>")
        ctx = Context(args)
        out = []
        _depgraph(parse_atom(args.args[0]), ctx.config(), ctx.repos(), out)
        print("\n".join(out))
        return 0
    if args.what == "installed":
        if args.args and not args.root:
            args.root = args.args[0]
        ctx = Context(args)
        for entry in ctx.vdb().entries():
            print(f'{entry.id.cpv}:{entry.slot} USE="{" ".join(sorted(entry.use))}"')
        return 0
    if args.what == "owns":
        if len(args.args) != 1:
            raise UsageError("usage: pm query owns <path>")
        ctx = Context(args)
        raw = args.args[0]
        target = Path(os.path.abspath(raw))
        try:
            rel = "/" + str(target.relative_to(ctx.root))
        except ValueError:
            # already an install path such as /usr/bin/foo
            rel = os.path.normpath("/" + raw)
        rel = rel.replace("//", "/")
        owners = ctx.vdb().owners(rel)
        if not owners:
            raise ResolutionError(f"{rel} is not owned by any installed package")
        for entry in owners:
            print(entry.id.cpv)
        return 0
    raise UsageError(f"unknown query {args.what!r}")


def cmd_inspect(args) -> int:
    try:
        machine = inspect_machine(args.path)
    except OSError as e:
        raise FormatError(f"{args.path}: {e.strerror}") from None
    print(f"Machine: {machine}")
    return 0


def _ask_stage(stage) -> bool:
    answer = input(f"Run stage {stage.number} ({' '.join(stage.atoms)})? [Y/n] ")
    return answer.strip().lower() in ("", "y", "yes")


def cmd_bootstrap(args) -> int:
    prefix = args.prefix or os.environ.get("EPREFIX")
    if not prefix:
        raise UsageError("pm bootstrap needs --prefix")
    plan = plan_bootstrap(prefix, rap_mode=args.libc)
    repos = load_repositories(args.config_root) if args.config_root else None
    host = load_config(args.config_root) if args.config_root else None
    report = execute_bootstrap(plan, repos, host,
                               confirm=_ask_stage if args.interactive else None)
    for n in report.skipped:
        print(f"stage {n}: already complete")
    for n in report.completed:
        print(f"stage {n}: complete")
    if report.finished:
        print(f"startprefix: {plan.prefix_path / 'startprefix'}")
    return 0


def cmd_overlay(args) -> int:
    ctx = Context(args, need_root=False)
    if args.action == "list":
        for repo in load_repositories(ctx.config_root):
            print(f"{repo.name} {repo.path} {repo.priority}")
        return 0
    if len(args.args) not in (2, 3):
        raise UsageError("usage: pm overlay add <name> <path> [priority]")
    name, path = args.args[:2]
    try:
        priority = int(args.args[2]) if len(args.args) == 3 else DEFAULT_OVERLAY_PRIORITY
    except ValueError:
        raise UsageError(f"bad priority {args.args[2]!r}") from None
    add_overlay(ctx.config_root, name, path, priority)
    print(f"added overlay {name}")
    return 0


def cmd_select(args) -> int:
    ctx = Context(args)
    vdb = ctx.vdb()
    modules = load_modules(ctx.config_root)
    if args.action in ("list", "show"):
        listing = select_list(args.module, vdb, modules)
        if args.action == "show":
            print(listing.active.cpv if listing.active else "(none)")
            return 0
        for n, provider in enumerate(listing.providers, 1):
            mark = " *" if provider == listing.active else ""
            print(f"[{n}] {provider.cpv}:{provider.slot}{mark}")
        return 0
    if not args.provider:
        raise UsageError("usage: pm select set <module> <provider>")
    provider = resolve_provider(args.provider, args.module, vdb, modules)
    if not args.pretend:
        select_set(args.module, provider, vdb, modules)
    print(f"{args.module} -> {provider.cpv}:{provider.slot}")
    return 0


COMMANDS = {
    "merge": cmd_merge,
    "unmerge": cmd_unmerge,
    "query": cmd_query,
    "inspect": cmd_inspect,
    "bootstrap": cmd_bootstrap,
    "overlay": cmd_overlay,
    "select": cmd_select,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"pm: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr, force=True)
    try:
        return COMMANDS[args.command](args)
    except PMError as e:
        print(f"pm: error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
