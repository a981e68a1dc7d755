"""Choosing the active provider among slotted installs.

Nothing is active until someone picks a provider. A module maps to a
package and a binary pattern through ``etc/pm/select-modules.conf``::

    python dev-lang/python python{slot}

Without an entry, the module name doubles as the package name and the
pattern is ``<module>{slot}``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .atoms import PackageId, parse_cpv
from .errors import ConfigError, FormatError, ParseError, SelectError
from .util import atomic_write, file_lock
from .vdb import Vdb


@dataclass(frozen=True)
class ModuleSpec:
    module: str
    category: str | None
    name: str
    binary_pattern: str

    def binary_for(self, slot: str) -> str:
        return self.binary_pattern.replace("{slot}", slot)


@dataclass
class SelectModule:
    module: str
    providers: list[PackageId] = field(default_factory=list)
    active: PackageId | None = None


def load_modules(config_root) -> dict[str, ModuleSpec]:
    path = Path(config_root) / "etc" / "pm" / "select-modules.conf"
    modules = {}
    if not path.exists():
        return modules
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        fields = line.split("#", 1)[0].split()
        if not fields:
            continue
        if len(fields) != 3 or "/" not in fields[1]:
            raise ConfigError(f"{path}:{lineno}: expected 'module category/name binary-pattern'")
        category, name = fields[1].split("/", 1)
        modules[fields[0]] = ModuleSpec(fields[0], category, name, fields[2])
    return modules


def _spec(module: str, modules) -> ModuleSpec:
    if modules and module in modules:
        return modules[module]
    return ModuleSpec(module, None, module, module + "{slot}")


def _record_path(vdb: Vdb, module: str) -> Path:
    return vdb.prefix_dir / "etc" / "pm" / "select" / module


def _alias_path(vdb: Vdb, module: str) -> Path:
    return vdb.prefix_dir / "usr" / "bin" / module


def _providers(spec: ModuleSpec, vdb: Vdb) -> list[PackageId]:
    found = [e.id for e in vdb.entries()
             if e.id.name == spec.name and (spec.category is None or e.id.category == spec.category)]
    return sorted(found, key=lambda p: p.version)


def _read_record(vdb: Vdb, module: str) -> tuple[str, str] | None:
    path = _record_path(vdb, module)
    if not path.exists():
        return None
    text = path.read_text(encoding="utf-8").strip()
    cpv, sep, slot = text.rpartition(":")
    if not sep:
        raise FormatError(f"{path}: malformed selection record {text!r}")
    return cpv, slot


def select_list(module: str, vdb: Vdb, modules=None) -> SelectModule:
    spec = _spec(module, modules)
    providers = _providers(spec, vdb)
    active = None
    record = _read_record(vdb, module)
    if record is not None:
        active = next((p for p in providers if p.cpv == record[0]), None)
    return SelectModule(module, providers, active)


def select_set(module: str, provider, vdb: Vdb, modules=None) -> SelectModule:
    spec = _spec(module, modules)
    providers = _providers(spec, vdb)
    cpv = provider.cpv if isinstance(provider, PackageId) else str(provider)
    chosen = next((p for p in providers if p.cpv == cpv), None)
    if chosen is None:
        raise SelectError(f"{cpv} is not an installed provider of {module!r}")

    binary = spec.binary_for(chosen.slot)
    binary_path = f"{vdb.eprefix}/usr/bin/{binary}"
    entry = vdb.get(chosen.cpv)
    if binary_path not in entry.owned_paths():
        raise SelectError(f"{chosen.cpv} does not ship {binary_path}")

    alias = _alias_path(vdb, module)
    with file_lock(vdb.lock_file):
        if alias.exists() and not alias.is_symlink():
            raise SelectError(f"{alias} exists and is not a managed symlink")
        tmp = alias.with_name(f".{module}.select-tmp")
        if tmp.is_symlink() or tmp.exists():
            tmp.unlink()
        os.symlink(binary, tmp)
        os.replace(tmp, alias)
        atomic_write(_record_path(vdb, module), f"{chosen.cpv}:{chosen.slot}\n")
    return SelectModule(module, providers, chosen)


def _modules_with_records(vdb: Vdb) -> list[str]:
    d = vdb.prefix_dir / "etc" / "pm" / "select"
    return sorted(os.listdir(d)) if d.is_dir() else []


def clear_if_active(vdb: Vdb, pkg: PackageId):
    """Drop the selection (record and alias) of any module whose active provider is ``pkg``."""
    for module in _modules_with_records(vdb):
        record = _read_record(vdb, module)
        if record and record[0] == pkg.cpv:
            alias = _alias_path(vdb, module)
            if alias.is_symlink():
                alias.unlink()
            _record_path(vdb, module).unlink()
    d = vdb.prefix_dir / "etc" / "pm" / "select"
    if d.is_dir() and not os.listdir(d):
        d.rmdir()


def retarget(vdb: Vdb, old: PackageId, new: PackageId):
    """Keep a selection pointing at a slot when its installed version is replaced."""
    for module in _modules_with_records(vdb):
        record = _read_record(vdb, module)
        if record and record[0] == old.cpv:
            atomic_write(_record_path(vdb, module), f"{new.cpv}:{new.slot}\n")


def resolve_provider(spec_text: str, module: str, vdb: Vdb, modules=None) -> PackageId:
    """Accept ``cat/name:slot``, ``cat/name-ver`` or a bare slot like ``2.7``."""
    from .atoms import parse_atom
    providers = _providers(_spec(module, modules), vdb)
    try:
        atom = parse_atom(spec_text)
    except ParseError:
        atom = None
    matches = []
    if atom is not None and (atom.slot is not None or atom.operator or atom.category):
        from .atoms import atom_matches
        matches = [p for p in providers if atom_matches(atom, p)]
    if not matches:
        try:
            pkg = parse_cpv(spec_text)
            matches = [p for p in providers if p.cpv == pkg.cpv]
        except ParseError:
            matches = [p for p in providers if p.slot == spec_text]
    if len(matches) != 1:
        raise SelectError(f"{spec_text!r} does not name exactly one installed provider of {module!r}")
    return matches[0]
