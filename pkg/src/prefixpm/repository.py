"""Recipe trees: the main tree plus overlays, and best-match selection."""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from . import conffile
from .atoms import Atom, PackageId, atom_matches, parse_version
from .depexpr import conditional_flags, parse_dep_expr
from .errors import (
    AmbiguousAtomError, ConfigError, MaskedError, NotFoundError, ParseError,
    RecipeError,
)
from .util import atomic_write, file_lock

log = logging.getLogger(__name__)

PHASES = ("fetch", "unpack", "prepare", "configure", "compile", "install")
RECIPE_KEYS = ("DESCRIPTION", "SLOT", "IUSE", "KEYWORDS", "DEPEND", "RDEPEND",
               "PDEPEND", "SRC", "PATCHES")
DEFAULT_OVERLAY_PRIORITY = 10

_PHASE_HEADER = re.compile(r"\[phase:([^\]]*)\]\s*\Z")


@dataclass(frozen=True)
class Recipe:
    id: PackageId
    description: str = ""
    iuse: frozenset[str] = frozenset()
    iuse_defaults: frozenset[str] = frozenset()
    depend: str = ""
    rdepend: str = ""
    pdepend: str = ""
    keywords: frozenset[str] = frozenset()
    src: tuple[str, ...] = ()
    phases: tuple[tuple[str, tuple[str, ...]], ...] = ()
    bundled_patches: tuple[str, ...] = ()
    path: Path | None = field(default=None, compare=False)
    phase_lines: tuple[tuple[str, tuple[int, ...]], ...] = field(default=(), compare=False)

    @property
    def slot(self) -> str:
        return self.id.slot

    @property
    def directory(self) -> Path | None:
        return self.path.parent if self.path is not None else None

    def phase(self, name: str) -> tuple[str, ...]:
        return dict(self.phases).get(name, ())

    def phase_linenos(self, name: str) -> tuple[int, ...]:
        linenos = dict(self.phase_lines).get(name)
        if linenos is None:
            return tuple(range(1, len(self.phase(name)) + 1))
        return linenos

    def dep_tree(self, kind: str):
        return parse_dep_expr(getattr(self, kind))


def _split(value: str) -> list[str]:
    return value.split()


def recipe_from_text(text: str, category: str, name: str, version: str,
                     repository: str = "", path: Path | None = None) -> Recipe:
    filename = str(path) if path else f"{category}/{name}/{name}-{version}.recipe"
    values: dict[str, str] = {}
    phases: dict[str, list[str]] = {}
    linenos: dict[str, list[int]] = {}
    current = None
    i, n, lineno = 0, len(text), 1
    while i < n:
        end = text.find("\n", i)
        if end < 0:
            end = n
        line = text[i:end]
        stripped = line.strip()
        header = _PHASE_HEADER.match(stripped)
        if header:
            current = header.group(1)
            if current not in PHASES:
                raise RecipeError(f"{filename}:{lineno}: unknown phase {current!r}")
            if current in phases:
                raise RecipeError(f"{filename}:{lineno}: duplicate phase {current!r}")
            phases[current] = []
            linenos[current] = []
        elif current is not None:
            command = conffile.strip_comment(line).strip()
            if command:
                phases[current].append(command)
                linenos[current].append(lineno)
        elif stripped and not stripped.startswith("#"):
            start = i + (len(line) - len(line.lstrip()))
            assignment, stop, new_lineno = conffile.parse_assignment_line(
                text, start, filename, lineno)
            if assignment.key not in RECIPE_KEYS:
                raise RecipeError(f"{filename}:{lineno}: unknown key {assignment.key!r}")
            values[assignment.key] = assignment.literal()
            lineno = new_lineno
            i = stop + 1
            lineno += 1
            continue
        i = end + 1
        lineno += 1

    iuse_tokens = _split(values.get("IUSE", ""))
    iuse = frozenset(t.lstrip("+-") for t in iuse_tokens)
    defaults = frozenset(t[1:] for t in iuse_tokens if t.startswith("+"))
    slot = values.get("SLOT", "0").strip() or "0"
    if ":" in slot or any(c.isspace() for c in slot):
        raise RecipeError(f"{filename}: illegal SLOT {slot!r}")

    deps = {}
    for kind in ("DEPEND", "RDEPEND", "PDEPEND"):
        raw = " ".join(values.get(kind, "").split())
        try:
            tree = parse_dep_expr(raw)
        except ParseError as e:
            raise RecipeError(f"{filename}: bad {kind}: {e}") from e
        undeclared = conditional_flags(tree) - iuse
        if undeclared:
            raise RecipeError(
                f"{filename}: {kind} uses flags not in IUSE: {' '.join(sorted(undeclared))}")
        deps[kind.lower()] = raw

    ordered = tuple((p, tuple(phases[p])) for p in PHASES if p in phases)
    ordered_lines = tuple((p, tuple(linenos[p])) for p in PHASES if p in phases)
    return Recipe(
        id=PackageId(category, name, parse_version(version), slot, repository),
        description=values.get("DESCRIPTION", ""),
        iuse=iuse,
        iuse_defaults=defaults,
        keywords=frozenset(_split(values.get("KEYWORDS", ""))),
        src=tuple(_split(values.get("SRC", ""))),
        phases=ordered,
        bundled_patches=tuple(_split(values.get("PATCHES", ""))),
        path=path,
        phase_lines=ordered_lines,
        **deps,
    )


def parse_recipe(file, repository: Repository | None = None) -> Recipe:
    path = Path(file)
    name = path.parent.name
    category = path.parent.parent.name
    stem = path.name
    if not stem.endswith(".recipe"):
        raise RecipeError(f"{path}: recipe files must end in .recipe")
    stem = stem[:-len(".recipe")]
    prefix = name + "-"
    if not stem.startswith(prefix):
        raise RecipeError(f"{path}: file name does not match package directory {name!r}")
    version = stem[len(prefix):]
    try:
        parse_version(version)
    except ParseError as e:
        raise RecipeError(f"{path}: bad version in file name: {e}") from e
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise RecipeError(f"cannot read {path}: {e.strerror}") from e
    return recipe_from_text(text, category, name, version,
                            repository.name if repository else "", path)


def render_recipe(recipe: Recipe) -> str:
    lines = []
    iuse = sorted(("+" + f) if f in recipe.iuse_defaults else f for f in recipe.iuse)
    fields = [
        ("DESCRIPTION", recipe.description),
        ("SLOT", recipe.slot),
        ("IUSE", " ".join(iuse)),
        ("KEYWORDS", " ".join(sorted(recipe.keywords))),
        ("DEPEND", recipe.depend),
        ("RDEPEND", recipe.rdepend),
        ("PDEPEND", recipe.pdepend),
        ("SRC", " ".join(recipe.src)),
        ("PATCHES", " ".join(recipe.bundled_patches)),
    ]
    for key, value in fields:
        if value:
            lines.append(f"{key}={conffile.quote(value)}")
    for phase, commands in recipe.phases:
        lines.append("")
        lines.append(f"[phase:{phase}]")
        lines.extend(commands)
    return "\n".join(lines) + "\n"


class Repository:
    """One recipe tree on disk (or in memory, for tests and tooling)."""

    def __init__(self, name: str, path=None, priority: int = 0):
        self.name = name
        self.path = Path(path) if path is not None else None
        self.priority = priority
        self._index: dict[str, list] | None = None
        self._parsed: dict[str, list[Recipe]] = {}

    def __repr__(self):
        return f"Repository({self.name!r}, {str(self.path)!r}, priority={self.priority})"

    def __eq__(self, other):
        if not isinstance(other, Repository):
            return NotImplemented
        return (self.name, self.path, self.priority) == (other.name, other.path, other.priority)

    def __hash__(self):
        return hash((self.name, self.path, self.priority))

    @classmethod
    def from_recipes(cls, name: str, recipes: Iterable[Recipe], priority: int = 0):
        repo = cls(name, None, priority)
        repo._index = {}
        for r in recipes:
            r = replace(r, id=replace(r.id, repository=name))
            repo._index.setdefault(r.id.cp, []).append(r)
        repo._parsed = {cp: list(rs) for cp, rs in repo._index.items()}
        return repo

    def _scan(self) -> dict[str, list]:
        if self._index is None:
            index: dict[str, list] = {}
            if self.path is not None:
                for category in sorted(os.listdir(self.path)):
                    cat_dir = self.path / category
                    if category.startswith(".") or not cat_dir.is_dir():
                        continue
                    for name in sorted(os.listdir(cat_dir)):
                        pkg_dir = cat_dir / name
                        if not pkg_dir.is_dir():
                            continue
                        files = sorted(f for f in os.listdir(pkg_dir) if f.endswith(".recipe"))
                        if files:
                            index[f"{category}/{name}"] = [pkg_dir / f for f in files]
            self._index = index
        return self._index

    def packages(self) -> list[str]:
        return sorted(self._scan())

    def has_package(self, cp: str) -> bool:
        return cp in self._scan()

    def categories_for(self, name: str) -> set[str]:
        return {cp.split("/", 1)[0] for cp in self._scan() if cp.split("/", 1)[1] == name}

    def recipes(self, cp: str) -> list[Recipe]:
        if cp not in self._parsed:
            self._parsed[cp] = [parse_recipe(f, self) for f in self._scan().get(cp, [])]
        return self._parsed[cp]

    def all_recipes(self) -> list[Recipe]:
        return [r for cp in self.packages() for r in self.recipes(cp)]


# -- repos.conf --------------------------------------------------------------

def repos_conf_path(config_root) -> Path:
    return Path(config_root) / "etc" / "pm" / "repos.conf"


def _read_repos_conf(config_root) -> list[tuple[str, str, int]]:
    path = repos_conf_path(config_root)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from e
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, rest = line.partition("=")
        fields = rest.split()
        if not sep or not name.strip() or not 1 <= len(fields) <= 2:
            raise ConfigError(f"{path}:{lineno}: expected 'name = path priority'")
        try:
            priority = int(fields[1]) if len(fields) == 2 else 0
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: priority must be an integer") from None
        entries.append((name.strip(), fields[0], priority))
    return entries


def load_repositories(config_root) -> list[Repository]:
    entries = _read_repos_conf(config_root)
    if not entries:
        raise ConfigError(f"{repos_conf_path(config_root)} names no repositories")
    seen = set()
    repos = []
    for name, raw_path, priority in entries:
        if name in seen:
            raise ConfigError(f"duplicate repository name {name!r}")
        seen.add(name)
        path = Path(raw_path)
        if not path.is_absolute():
            path = Path(config_root) / path
        if not path.is_dir():
            raise ConfigError(f"repository {name!r}: path {path} does not exist")
        repos.append(Repository(name, path, priority))
    repos.sort(key=lambda r: (-r.priority, r.name))
    return repos


def add_overlay(config_root, name: str, path, priority: int = DEFAULT_OVERLAY_PRIORITY) -> Path:
    conf = repos_conf_path(config_root)
    if not re.match(r"[A-Za-z0-9_][A-Za-z0-9_.-]*\Z", name):
        raise ConfigError(f"illegal repository name {name!r}")
    path = Path(path).resolve()
    if not path.is_dir() or not os.access(path, os.R_OK | os.X_OK):
        raise ConfigError(f"overlay path {path} is not a readable directory")
    with file_lock(conf.parent / ".lock"):
        existing = conf.read_text(encoding="utf-8") if conf.exists() else ""
        names = {e[0] for e in _read_repos_conf(config_root)} if existing else set()
        if name in names:
            raise ConfigError(f"repository {name!r} is already registered")
        if existing and not existing.endswith("\n"):
            existing += "\n"
        atomic_write(conf, existing + f"{name} = {path} {priority}\n")
    return conf


# -- lookups -----------------------------------------------------------------

def resolve_category(atom: Atom, repos: list[Repository]) -> Atom:
    if atom.category is not None:
        return atom
    categories = set()
    for repo in repos:
        categories |= repo.categories_for(atom.name)
    if len(categories) > 1:
        raise AmbiguousAtomError(atom.name, [f"{c}/{atom.name}" for c in categories])
    if not categories:
        return atom
    return atom.with_category(categories.pop())


def find_recipes(atom: Atom, repos: list[Repository]) -> list[Recipe]:
    atom = resolve_category(atom, repos)
    if atom.category is None:
        return []
    plain = replace(atom, use_deps=())
    cp = atom.cp
    for repo in sorted(repos, key=lambda r: (-r.priority, r.name)):
        if repo.has_package(cp):
            # whole-package shadowing: lower-priority trees are not consulted
            found = [r for r in repo.recipes(cp) if atom_matches(plain, r.id)]
            found.sort(key=lambda r: r.id.version, reverse=True)
            return found
    return []


def keywords_accepted(keywords, accept) -> bool:
    accept = set(accept)
    if "**" in accept:
        return True
    for kw in keywords:
        if kw.startswith("~"):
            if kw in accept:
                return True
        elif kw in accept or "~" + kw in accept:
            return True
    return False


def best_match(atom: Atom, repos: list[Repository], accept_keywords) -> Recipe:
    candidates = find_recipes(atom, repos)
    if not candidates:
        raise NotFoundError(atom)
    for recipe in candidates:
        if keywords_accepted(recipe.keywords, accept_keywords):
            return recipe
    seen = set()
    for recipe in candidates:
        seen |= recipe.keywords
    raise MaskedError(atom, seen)
