"""Versions, atoms and package identities.

The version scheme is a trimmed-down PMS grammar::

    N(.N)*[letter][_suffix[N]][-rN]

with suffix one of ``alpha beta pre rc p``. Components compare numerically
(no leading-zero string rule), and a shorter component list sorts first when
it is a prefix of the longer one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import total_ordering

from .errors import ParseError

SUFFIX_ORDER = {"alpha": 0, "beta": 1, "pre": 2, "rc": 3, "p": 5}
_NO_SUFFIX_RANK = 4

OPERATORS = (">=", "<=", "=", ">", "<", "~")

_CATEGORY_RE = re.compile(r"[a-z0-9-]+\Z")
_NAME_RE = re.compile(r"[A-Za-z0-9_+-]+\Z")
_FLAG_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9_+@.-]*\Z")


@total_ordering
@dataclass(frozen=True)
class Version:
    numeric_components: tuple[int, ...]
    letter: str | None = None
    suffix: tuple[str, int] | None = None
    revision: int = 0

    def __post_init__(self):
        if not self.numeric_components:
            raise ValueError("version needs at least one numeric component")

    def __str__(self):
        return render_version(self)

    def __repr__(self):
        return f"Version({render_version(self)!r})"

    def _key(self):
        suffix_rank = (_NO_SUFFIX_RANK, 0)
        if self.suffix is not None:
            suffix_rank = (SUFFIX_ORDER[self.suffix[0]], self.suffix[1])
        # letter: absent sorts before any letter
        letter = 0 if self.letter is None else ord(self.letter) - ord("a") + 1
        return (self.numeric_components, letter, suffix_rank, self.revision)

    def __lt__(self, other):
        if not isinstance(other, Version):
            return NotImplemented
        return compare_versions(self, other) < 0

    def without_revision(self) -> Version:
        return Version(self.numeric_components, self.letter, self.suffix, 0)


def parse_version(text: str) -> Version:
    if not text:
        raise ParseError("empty version", text, 0)
    i = 0
    n = len(text)
    components = []
    while True:
        start = i
        while i < n and text[i].isdigit():
            i += 1
        if i == start:
            raise ParseError("expected a numeric component", text, i)
        components.append(int(text[start:i]))
        if i < n and text[i] == ".":
            i += 1
            continue
        break

    letter = None
    if i < n and "a" <= text[i] <= "z":
        letter = text[i]
        i += 1

    suffix = None
    if i < n and text[i] == "_":
        i += 1
        start = i
        while i < n and text[i].isalpha():
            i += 1
        kind = text[start:i]
        if kind not in SUFFIX_ORDER:
            raise ParseError(f"unknown version suffix {kind!r}", text, start)
        start = i
        while i < n and text[i].isdigit():
            i += 1
        suffix = (kind, int(text[start:i]) if i > start else 0)

    revision = 0
    if i < n and text[i] == "-":
        if text[i + 1:i + 2] != "r":
            raise ParseError("expected '-r' revision", text, i)
        i += 2
        start = i
        while i < n and text[i].isdigit():
            i += 1
        if i == start:
            raise ParseError("revision needs digits", text, i)
        revision = int(text[start:i])

    if i != n:
        raise ParseError("trailing garbage in version", text, i)
    return Version(tuple(components), letter, suffix, revision)


def render_version(v: Version) -> str:
    out = ".".join(str(c) for c in v.numeric_components)
    if v.letter:
        out += v.letter
    if v.suffix is not None:
        kind, num = v.suffix
        out += f"_{kind}{num}" if num else f"_{kind}"
    if v.revision:
        out += f"-r{v.revision}"
    return out


def compare_versions(a: Version, b: Version) -> int:
    """Return -1, 0 or 1 as ``a`` sorts before, equal to or after ``b``."""
    ka, kb = a._key(), b._key()
    # tuple comparison gives the "fewer components first" rule for free
    if ka < kb:
        return -1
    if ka > kb:
        return 1
    return 0


@dataclass(frozen=True, order=True)
class PackageId:
    category: str
    name: str
    version: Version
    slot: str = "0"
    repository: str = ""

    @property
    def cp(self) -> str:
        return f"{self.category}/{self.name}"

    @property
    def cpv(self) -> str:
        return f"{self.category}/{self.name}-{self.version}"

    @property
    def pf(self) -> str:
        return f"{self.name}-{self.version}"

    def sort_key(self):
        return (self.category, self.name, str(self.version))

    def __str__(self):
        return f"{self.cpv}:{self.slot}"


@dataclass(frozen=True)
class UseDep:
    flag: str
    enabled: bool = True

    def __str__(self):
        return self.flag if self.enabled else "-" + self.flag


@dataclass(frozen=True)
class Atom:
    name: str
    category: str | None = None
    operator: str | None = None
    version: Version | None = None
    slot: str | None = None
    use_deps: tuple[UseDep, ...] = field(default=())

    def __post_init__(self):
        if (self.operator is None) != (self.version is None):
            raise ValueError("operator and version must be given together")
        if self.slot is not None and (
            not self.slot or ":" in self.slot or any(c.isspace() for c in self.slot)
        ):
            raise ValueError(f"bad slot {self.slot!r}")

    @property
    def cp(self) -> str:
        if self.category is None:
            return self.name
        return f"{self.category}/{self.name}"

    def with_category(self, category: str) -> Atom:
        return Atom(self.name, category, self.operator, self.version,
                    self.slot, self.use_deps)

    def __str__(self):
        return render_atom(self)


def render_atom(atom: Atom) -> str:
    out = atom.operator or ""
    out += atom.cp
    if atom.version is not None:
        out += "-" + render_version(atom.version)
    if atom.slot is not None:
        out += ":" + atom.slot
    if atom.use_deps:
        out += "[" + ",".join(str(u) for u in atom.use_deps) + "]"
    return out


def _split_name_version(text: str) -> tuple[str, Version] | None:
    """Split ``name-1.2-r3`` at the leftmost dash followed by a valid version."""
    for m in re.finditer("-", text):
        head, tail = text[:m.start()], text[m.end():]
        if not head or not tail[:1].isdigit():
            continue
        try:
            return head, parse_version(tail)
        except ParseError:
            continue
    return None


def parse_atom(text: str) -> Atom:
    if not text:
        raise ParseError("empty atom", text, 0)
    rest = text
    pos = 0

    operator = None
    for op in OPERATORS:
        if rest.startswith(op):
            operator = op
            rest = rest[len(op):]
            pos += len(op)
            break

    use_deps: list[UseDep] = []
    if rest.endswith("]"):
        open_idx = rest.find("[")
        if open_idx < 0:
            raise ParseError("unbalanced ']' in atom", text, len(text) - 1)
        body = rest[open_idx + 1:-1]
        if not body:
            raise ParseError("empty USE dependency list", text, pos + open_idx)
        for item in body.split(","):
            enabled = not item.startswith("-")
            flag = item if enabled else item[1:]
            if not _FLAG_RE.match(flag):
                raise ParseError(f"bad USE flag {item!r}", text, pos + open_idx + 1)
            use_deps.append(UseDep(flag, enabled))
        rest = rest[:open_idx]
    elif "[" in rest:
        raise ParseError("unbalanced '[' in atom", text, pos + rest.index("["))

    slot = None
    if ":" in rest:
        colon = rest.index(":")
        slot = rest[colon + 1:]
        if not slot:
            raise ParseError("empty slot", text, pos + colon + 1)
        if ":" in slot or any(c.isspace() for c in slot) or slot in ("=", "*"):
            raise ParseError(f"illegal slot {slot!r}", text, pos + colon + 1)
        rest = rest[:colon]

    category = None
    if "/" in rest:
        category, rest = rest.split("/", 1)
        if not _CATEGORY_RE.match(category):
            raise ParseError(f"illegal category {category!r}", text, pos)
        pos += len(category) + 1

    version = None
    if operator is not None:
        split = _split_name_version(rest)
        if split is None:
            raise ParseError(f"operator {operator!r} without version", text, pos)
        rest, version = split
    elif _split_name_version(rest) is not None:
        raise ParseError("version given without an operator", text, pos)

    if not rest or not _NAME_RE.match(rest):
        bad = next((i for i, c in enumerate(rest) if not _NAME_RE.match(c)), 0)
        raise ParseError(f"illegal package name {rest!r}", text, pos + bad)
    return Atom(rest, category, operator, version, slot, tuple(use_deps))


def parse_cpv(text: str, slot: str = "0", repository: str = "") -> PackageId:
    """Parse ``category/name-version`` into a PackageId."""
    if "/" not in text:
        raise ParseError("expected category/name-version", text, 0)
    category, rest = text.split("/", 1)
    split = _split_name_version(rest)
    if split is None:
        raise ParseError("missing version", text, len(category) + 1)
    name, version = split
    return PackageId(category, name, version, slot, repository)


def version_matches(operator: str | None, wanted: Version | None, have: Version) -> bool:
    if operator is None:
        return True
    c = compare_versions(have, wanted)
    if operator == "=":
        return c == 0
    if operator == "~":
        return compare_versions(have.without_revision(), wanted.without_revision()) == 0
    if operator == ">=":
        return c >= 0
    if operator == "<=":
        return c <= 0
    if operator == ">":
        return c > 0
    if operator == "<":
        return c < 0
    raise ValueError(f"unknown operator {operator!r}")


def atom_matches(atom: Atom, candidate: PackageId, candidate_use=frozenset()) -> bool:
    if atom.name != candidate.name:
        return False
    if atom.category is not None and atom.category != candidate.category:
        return False
    if not version_matches(atom.operator, atom.version, candidate.version):
        return False
    if atom.slot is not None and atom.slot != candidate.slot:
        return False
    for dep in atom.use_deps:
        if (dep.flag in candidate_use) != dep.enabled:
            return False
    return True
