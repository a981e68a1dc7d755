"""Phase execution, merging into the live root, and unmerging."""

from __future__ import annotations

import contextlib
import filecmp
import logging
import os
import shutil
import tempfile
from pathlib import Path

from .config import (Config, EffectiveUse, build_environment, compute_use, env_snapshot,
                     find_user_patches)
from .errors import (CollisionError, CommandError, MergeError, NotInstalledError, PatchError,
                     PhaseError)
from .interp import BuildContext, inspect_machine, interpret_command
from .patching import apply_patch
from .repository import PHASES, Recipe
from .util import file_lock, join_root, sha256_file
from .vdb import ContentsEntry, Vdb, VdbEntry

log = logging.getLogger(__name__)

__all__ = [
    "BuildContext", "prepare_context", "run_phases", "merge", "unmerge",
    "inspect_machine", "execute_plan",
]


def prepare_context(config: Config, recipe: Recipe, use: EffectiveUse, tmpdir,
                    distdir=None) -> BuildContext:
    base = Path(tmpdir) / recipe.id.category / recipe.id.pf
    if base.exists():
        shutil.rmtree(base)
    workdir = base / "work"
    image = base / "image"
    workdir.mkdir(parents=True)
    image.mkdir()
    env = build_environment(config, recipe, use, workdir=workdir, image=image)
    return BuildContext(
        S=workdir,
        D=image,
        env=env,
        use=use,
        target_root=Path(config.root),
        eprefix=config.eprefix_value,
        chost=env.get("CHOST") or config.chost,
        cbuild=env.get("CBUILD") or config.cbuild,
        distdir=Path(distdir) if distdir else Path(tmpdir) / "distfiles",
        recipe_dir=recipe.directory,
        user_patches=find_user_patches(config, recipe.id),
    )


def _copy_entry(src: Path, dst: Path):
    if src.is_dir():
        shutil.copytree(src, dst, symlinks=True, dirs_exist_ok=True)
    else:
        dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dst)
        os.chmod(dst, src.stat().st_mode & 0o7777)


def _default_phase(phase: str, recipe: Recipe, ctx: BuildContext):
    if phase == "fetch":
        for src in recipe.src:
            origin = (ctx.recipe_dir or Path(".")) / src
            if not origin.exists():
                raise PhaseError("fetch", 0, f"missing source file {src}")
            cached = ctx.distdir / recipe.id.category / recipe.id.name / src
            stale = not cached.exists() or not filecmp.cmp(origin, cached, shallow=False)
            if origin.is_dir() or stale:
                _copy_entry(origin, cached)
    elif phase == "unpack":
        for src in recipe.src:
            cached = ctx.distdir / recipe.id.category / recipe.id.name / src
            _copy_entry(cached, ctx.S / Path(src).name)
    elif phase == "prepare":
        patches = [(ctx.recipe_dir / p) for p in recipe.bundled_patches] + list(ctx.user_patches)
        for patch in patches:
            try:
                apply_patch(Path(patch).read_bytes(), ctx.S, strip=1)
            except OSError as e:
                raise PhaseError("prepare", 0, f"cannot read patch {patch}: {e.strerror}") from e
            except PatchError as e:
                raise PhaseError("prepare", 0, f"{Path(patch).name}: {e}") from e
            log.info("applied %s", Path(patch).name)


def run_phases(recipe: Recipe, ctx: BuildContext) -> Path:
    ctx.distdir.mkdir(parents=True, exist_ok=True)
    for phase in PHASES:
        _default_phase(phase, recipe, ctx)
        commands = recipe.phase(phase)
        for lineno, line in zip(recipe.phase_linenos(phase), commands):
            before = len(ctx.output)
            try:
                status = interpret_command(line, ctx)
            except CommandError as e:
                raise PhaseError(phase, lineno, str(e), e.output) from e
            if status != 0:
                output = "".join(ctx.output[before:])
                raise PhaseError(phase, lineno, f"command exited with status {status}", output)
    return ctx.D


# -- merging -----------------------------------------------------------------

def _features(ctx: BuildContext) -> set[str]:
    return set(ctx.env.get("FEATURES", "").split())


def _image_contents(ctx: BuildContext) -> list[tuple[ContentsEntry, Path | None]]:
    """Walk D and return CONTENTS entries paired with their source path."""
    eprefix = ctx.eprefix
    splitdebug = "splitdebug" in _features(ctx)
    debug_root = f"{eprefix}/usr/lib/debug"
    dirs: set[str] = set()
    files: list[tuple[ContentsEntry, Path]] = []

    def add_parents(path: str):
        parent = os.path.dirname(path)
        while parent not in ("/", ""):
            dirs.add(parent)
            parent = os.path.dirname(parent)

    for top, dirnames, filenames in os.walk(ctx.D):
        dirnames.sort()
        rel_top = "/" + os.path.relpath(top, ctx.D).replace(os.sep, "/")
        if rel_top == "/.":
            rel_top = "/"
        for d in dirnames:
            full = Path(top) / d
            path = os.path.join(rel_top, d)
            if full.is_symlink():
                files.append((ContentsEntry("sym", path, target=os.readlink(full)), full))
            else:
                dirs.add(path)
        for f in sorted(filenames):
            full = Path(top) / f
            path = os.path.join(rel_top, f)
            if splitdebug and f.endswith(".debug") and not path.startswith(debug_root + "/"):
                inner = path[len(eprefix):] if eprefix and path.startswith(eprefix + "/") else path
                path = debug_root + inner
            add_parents(path)
            if full.is_symlink():
                files.append((ContentsEntry("sym", path, target=os.readlink(full)), full))
            else:
                files.append((ContentsEntry("obj", path, sha256_file(full)), full))
    # the offset directory and its ancestors belong to nobody
    dirs = {d for d in dirs if not (eprefix == d or eprefix.startswith(d + "/"))}
    entries = [(ContentsEntry("dir", d), None) for d in sorted(dirs)]
    entries.extend(sorted(files, key=lambda e: e[0].path))
    return entries


def merge(recipe: Recipe, ctx: BuildContext, vdb: Vdb, reason: str = "target") -> VdbEntry:
    root = Path(ctx.target_root)
    pkg = recipe.id
    with file_lock(vdb.lock_file):
        vdb.invalidate()
        items = _image_contents(ctx)
        new_paths = {e.path for e, _ in items}

        collisions = []
        owners = vdb.owner_map()
        for entry, _ in items:
            if entry.kind == "dir":
                continue
            for owner in owners.get(entry.path, []):
                if (owner.id.category, owner.id.name) != (pkg.category, pkg.name):
                    collisions.append((entry.path, owner.id.cpv))
        if collisions:
            raise CollisionError(collisions)

        vdb.db_dir.mkdir(parents=True, exist_ok=True)
        join_root(root, ctx.eprefix).mkdir(parents=True, exist_ok=True)
        backup_dir = Path(tempfile.mkdtemp(dir=vdb.db_dir, prefix=f".merge-{pkg.pf}."))
        created_dirs: list[Path] = []
        written: list[tuple[Path, Path | None]] = []
        try:
            for n, (entry, src) in enumerate(items):
                dest = join_root(root, entry.path)
                if entry.kind == "dir":
                    if dest.is_symlink() or (dest.exists() and not dest.is_dir()):
                        raise MergeError(f"{entry.path}: exists and is not a directory")
                    if not dest.exists():
                        dest.mkdir()
                        created_dirs.append(dest)
                    continue
                backup = None
                if dest.is_symlink() or dest.exists():
                    if dest.is_dir() and not dest.is_symlink():
                        raise MergeError(f"{entry.path}: exists and is a directory")
                    backup = backup_dir / str(n)
                    os.replace(dest, backup)
                written.append((dest, backup))
                if entry.kind == "sym":
                    os.symlink(entry.target, dest)
                else:
                    shutil.copyfile(src, dest)
                    os.chmod(dest, src.stat().st_mode & 0o7777)
        except BaseException as e:
            for dest, backup in reversed(written):
                with contextlib.suppress(FileNotFoundError):
                    if dest.is_symlink() or dest.exists():
                        dest.unlink()
                if backup is not None:
                    os.replace(backup, dest)
            for d in reversed(created_dirs):
                with contextlib.suppress(OSError):
                    d.rmdir()
            shutil.rmtree(backup_dir, ignore_errors=True)
            if isinstance(e, OSError):
                raise MergeError(f"merge of {pkg.cpv} failed and was rolled back: {e}") from e
            raise
        shutil.rmtree(backup_dir, ignore_errors=True)

        # drop files of the version(s) this one replaces
        replaced = vdb.same_slot(pkg.category, pkg.name, pkg.slot)
        replaced_ids = {e.id.cpv for e in replaced}
        others = {}
        for e in vdb.entries():
            if e.id.cpv in replaced_ids:
                continue
            for p in e.owned_paths():
                others.setdefault(p, e)
        for old in replaced:
            _remove_contents(root, old, keep=new_paths | set(others))
            if old.id.version != pkg.version:
                vdb.remove_entry(old.id)

        previous = next((e for e in replaced if e.id.version == pkg.version), None)
        if previous is not None and reason == "changed-use-rebuild":
            reason = previous.reason
        entry = VdbEntry(
            id=pkg,
            use=ctx.use.enabled,
            chost=ctx.chost,
            build_env=env_snapshot(ctx.env),
            contents=[e for e, _ in items],
            depend=recipe.depend,
            rdepend=recipe.rdepend,
            pdepend=recipe.pdepend,
            reason=reason,
        )
        vdb.write_entry(entry)
        if reason == "target":
            vdb.add_world(pkg)

        from . import selection
        for old in replaced:
            if old.id.version != pkg.version:
                selection.retarget(vdb, old.id, pkg)
        return entry


def _remove_contents(root: Path, entry: VdbEntry, keep: set[str]) -> list[str]:
    removed = []
    for c in entry.contents:
        if c.path in keep or c.kind == "dir":
            continue
        dest = join_root(root, c.path)
        if c.kind == "sym":
            if dest.is_symlink() and os.readlink(dest) == c.target:
                dest.unlink()
                removed.append(c.path)
        elif dest.is_file() and not dest.is_symlink():
            if sha256_file(dest) == c.digest:
                dest.unlink()
                removed.append(c.path)
            else:
                log.warning("%s: modified since install, left in place", c.path)
    dirs = sorted((c.path for c in entry.contents if c.kind == "dir" and c.path not in keep),
                  key=lambda p: p.count("/"), reverse=True)
    for path in dirs:
        dest = join_root(root, path)
        if dest.is_dir() and not dest.is_symlink() and not os.listdir(dest):
            dest.rmdir()
            removed.append(path)
    return removed


def unmerge(pkg, vdb: Vdb, root=None) -> list[str]:
    root = Path(root) if root is not None else vdb.root
    cpv = pkg if isinstance(pkg, str) else pkg.cpv
    with file_lock(vdb.lock_file):
        vdb.invalidate()
        entry = vdb.get(cpv)
        if entry is None:
            raise NotInstalledError(f"{cpv} is not installed")
        claimed = set()
        for other in vdb.entries():
            if other.id.cpv != cpv:
                claimed |= other.owned_paths()
        # the alias must go first so it does not pin usr/bin in place
        from . import selection
        selection.clear_if_active(vdb, entry.id)
        removed = _remove_contents(root, entry, keep=claimed)
        vdb.remove_world(entry.id)
        vdb.remove_entry(entry.id)
    return removed


# -- plan execution -----------------------------------------------------------

def default_tmpdir(config: Config) -> Path | None:
    value = config.vars.get("PM_TMPDIR")
    return Path(value) if value else None


def execute_plan(plan, config: Config, vdb: Vdb, tmpdir=None, distdir=None, progress=None):
    """Build and merge every action in order; returns the written VDB entries."""
    tmpdir = tmpdir or default_tmpdir(config)
    distdir = distdir or config.vars.get("DISTDIR") or None
    owned_tmp = tmpdir is None
    if owned_tmp:
        tmpdir = Path(tempfile.mkdtemp(prefix="pm-build-"))
    tmpdir = Path(tmpdir)
    results = []
    try:
        for action in plan.actions:
            if progress:
                progress(action)
            use = action.use if action.use is not None else compute_use(config, action.recipe)
            ctx = prepare_context(config, action.recipe, use, tmpdir, distdir)
            try:
                run_phases(action.recipe, ctx)
                results.append(merge(action.recipe, ctx, vdb, reason=action.reason))
            finally:
                shutil.rmtree(ctx.S.parent, ignore_errors=True)
                _prune_empty(ctx.S.parent.parent, stop=tmpdir)
    finally:
        if owned_tmp:
            shutil.rmtree(tmpdir, ignore_errors=True)
    return results


def _prune_empty(path: Path, stop: Path):
    while path != stop and stop in path.parents:
        try:
            path.rmdir()
        except OSError:
            return
        path = path.parent
