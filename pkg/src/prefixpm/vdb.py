"""Installed-package database and world file.

Layout under ``<root><eprefix>``::

    var/db/pm/<cat>/<name>-<ver>/{SLOT,USE,CHOST,BUILD_ENV,CONTENTS,DEPEND,RDEPEND,PDEPEND,REASON,REPOSITORY}
    var/lib/pm/world
"""

from __future__ import annotations

import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import conffile
from .atoms import Atom, PackageId, atom_matches, parse_atom, parse_cpv
from .errors import FormatError, ParseError
from .util import atomic_write, join_root, normalize_eprefix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContentsEntry:
    kind: str  # obj | dir | sym
    path: str  # absolute-style, relative to root
    digest: str | None = None
    target: str | None = None

    def render(self) -> str:
        if self.kind == "obj":
            return f"obj {self.path} sha256:{self.digest}"
        if self.kind == "sym":
            return f"sym {self.path} -> {self.target}"
        return f"dir {self.path}"

    @classmethod
    def parse(cls, line: str) -> ContentsEntry:
        kind, _, rest = line.partition(" ")
        if kind == "obj":
            path, _, digest = rest.rpartition(" ")
            if not digest.startswith("sha256:"):
                raise FormatError(f"bad CONTENTS line {line!r}")
            return cls("obj", path, digest[len("sha256:"):])
        if kind == "sym":
            path, sep, target = rest.partition(" -> ")
            if not sep:
                raise FormatError(f"bad CONTENTS line {line!r}")
            return cls("sym", path, target=target)
        if kind == "dir":
            return cls("dir", rest)
        raise FormatError(f"bad CONTENTS line {line!r}")


@dataclass
class VdbEntry:
    id: PackageId
    use: frozenset[str] = frozenset()
    chost: str = ""
    build_env: dict[str, str] = field(default_factory=dict)
    contents: list[ContentsEntry] = field(default_factory=list)
    depend: str = ""
    rdepend: str = ""
    pdepend: str = ""
    reason: str = "target"

    @property
    def slot(self) -> str:
        return self.id.slot

    def owned_paths(self) -> set[str]:
        return {c.path for c in self.contents}


class Vdb:
    def __init__(self, root="/", eprefix="/"):
        self.root = Path(root)
        self.eprefix = normalize_eprefix(eprefix)
        self._cache: dict[str, VdbEntry] | None = None

    @property
    def prefix_dir(self) -> Path:
        return join_root(self.root, self.eprefix)

    @property
    def db_dir(self) -> Path:
        return self.prefix_dir / "var" / "db" / "pm"

    @property
    def world_file(self) -> Path:
        return self.prefix_dir / "var" / "lib" / "pm" / "world"

    @property
    def lock_file(self) -> Path:
        return self.prefix_dir / "var" / "lib" / "pm" / ".lock"

    def init(self):
        """Create the empty database skeleton (idempotent)."""
        self.db_dir.mkdir(parents=True, exist_ok=True)
        self.world_file.parent.mkdir(parents=True, exist_ok=True)
        if not self.world_file.exists():
            atomic_write(self.world_file, "")
        self.lock_file.touch()

    def invalidate(self):
        self._cache = None

    # -- reading ---------------------------------------------------------

    def _load(self) -> dict[str, VdbEntry]:
        if self._cache is None:
            entries = {}
            if self.db_dir.is_dir():
                for category in sorted(os.listdir(self.db_dir)):
                    cat_dir = self.db_dir / category
                    if category.startswith(".") or not cat_dir.is_dir():
                        continue
                    for pf in sorted(os.listdir(cat_dir)):
                        if pf.startswith("."):
                            continue
                        entry = self._read_entry(category, pf)
                        entries[entry.id.cpv] = entry
            self._cache = entries
        return self._cache

    def _read_entry(self, category: str, pf: str) -> VdbEntry:
        d = self.db_dir / category / pf

        def read(name, default=""):
            p = d / name
            return p.read_text(encoding="utf-8").rstrip("\n") if p.exists() else default

        try:
            slot = read("SLOT", "0")
            pkg = parse_cpv(f"{category}/{pf}", slot=slot, repository=read("REPOSITORY"))
        except ParseError as e:
            raise FormatError(f"corrupt VDB entry {d}: {e}") from e
        build_env = conffile.expand_in_order(
            conffile.parse_assignments(read("BUILD_ENV"), str(d / "BUILD_ENV")))
        contents = [ContentsEntry.parse(line) for line in read("CONTENTS").splitlines() if line]
        return VdbEntry(
            id=pkg,
            use=frozenset(read("USE").split()),
            chost=read("CHOST"),
            build_env=build_env,
            contents=contents,
            depend=read("DEPEND"),
            rdepend=read("RDEPEND"),
            pdepend=read("PDEPEND"),
            reason=read("REASON", "target"),
        )

    def entries(self) -> list[VdbEntry]:
        return sorted(self._load().values(), key=lambda e: e.id.sort_key())

    def get(self, cpv: str) -> VdbEntry | None:
        return self._load().get(cpv)

    def match(self, atom: Atom) -> list[VdbEntry]:
        return [e for e in self.entries() if atom_matches(atom, e.id, e.use)]

    def satisfies(self, atom: Atom) -> bool:
        return any(atom_matches(atom, e.id, e.use) for e in self._load().values())

    def same_slot(self, category: str, name: str, slot: str) -> list[VdbEntry]:
        return [e for e in self.entries()
                if (e.id.category, e.id.name, e.id.slot) == (category, name, slot)]

    def owners(self, path: str) -> list[VdbEntry]:
        return [e for e in self.entries() if path in e.owned_paths()]

    def owner_map(self) -> dict[str, list[VdbEntry]]:
        owners: dict[str, list[VdbEntry]] = {}
        for e in self.entries():
            for p in e.owned_paths():
                owners.setdefault(p, []).append(e)
        return owners

    # -- writing ---------------------------------------------------------

    def write_entry(self, entry: VdbEntry):
        target = self.db_dir / entry.id.category / entry.id.pf
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(dir=target.parent, prefix=f".{entry.id.pf}."))
        try:
            files = {
                "SLOT": entry.id.slot,
                "USE": " ".join(sorted(entry.use)),
                "CHOST": entry.chost,
                "BUILD_ENV": "".join(f"{k}={conffile.quote(v)}\n"
                                     for k, v in sorted(entry.build_env.items())),
                "CONTENTS": "".join(c.render() + "\n" for c in entry.contents),
                "DEPEND": entry.depend,
                "RDEPEND": entry.rdepend,
                "PDEPEND": entry.pdepend,
                "REASON": entry.reason,
                "REPOSITORY": entry.id.repository,
            }
            for name, value in files.items():
                if value and not value.endswith("\n"):
                    value += "\n"
                (tmp / name).write_text(value, encoding="utf-8")
            os.chmod(tmp, 0o755)
            if target.exists():
                shutil.rmtree(target)
            os.replace(tmp, target)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        self.invalidate()

    def remove_entry(self, pkg: PackageId):
        target = self.db_dir / pkg.category / pkg.pf
        if target.exists():
            shutil.rmtree(target)
        cat_dir = target.parent
        if cat_dir.is_dir() and not os.listdir(cat_dir):
            cat_dir.rmdir()
        self.invalidate()

    # -- world -----------------------------------------------------------

    def world(self) -> list[Atom]:
        if not self.world_file.exists():
            return []
        atoms = []
        for line in self.world_file.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                atoms.append(parse_atom(line))
        return atoms

    def _write_world(self, lines: set[str]):
        atomic_write(self.world_file, "".join(f"{l}\n" for l in sorted(lines)))

    def add_world(self, pkg: PackageId):
        lines = {str(a) for a in self.world()}
        lines.add(world_atom(pkg))
        self._write_world(lines)

    def remove_world(self, pkg: PackageId):
        if not self.world_file.exists():
            return
        keep = set()
        for atom in self.world():
            if atom_matches(atom, pkg) and not any(
                    atom_matches(atom, e.id) for e in self.entries() if e.id != pkg):
                continue
            keep.add(str(atom))
        self._write_world(keep)


def world_atom(pkg: PackageId) -> str:
    return pkg.cp if pkg.slot == "0" else f"{pkg.cp}:{pkg.slot}"


class EmptyVdb(Vdb):
    """A database with nothing installed (e.g. an absent host root)."""

    def __init__(self):
        super().__init__("/nonexistent-root", "/")
        self._cache = {}

    def invalidate(self):
        self._cache = {}
