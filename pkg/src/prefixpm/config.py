"""Layered configuration for a (config-root, root, prefix) triple.

Files live under ``<config_root>/etc/pm``::

    make.conf          KEY="value" with ${VAR} expansion in file order
    global-env.conf    same syntax, applied to every build
    package.env        atom env-file-name
    env/<name>.conf    per-package environment overrides
    package.use        atom flag -flag ...
    patches/<cat>/<name>[-<version>]/*   user patches
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import conffile
from .atoms import Atom, PackageId, atom_matches, parse_atom
from .errors import ConfigError, ParseError
from .util import bytes_key, normalize_eprefix

log = logging.getLogger(__name__)

DEFAULT_CBUILD = "x86_64-pc-linux-gnu"
DEFAULT_ACCEPT_KEYWORDS = "amd64-linux"
DEFAULT_FEATURES = "collision-protect"
SNAPSHOT_KEYS = ("CC", "CFLAGS", "CXXFLAGS", "LDFLAGS", "FEATURES")


@dataclass(frozen=True)
class EffectiveUse:
    enabled: frozenset[str]
    origin: dict[str, str] = field(default_factory=dict, compare=False, hash=False)

    def __str__(self):
        return " ".join(sorted(self.enabled))


@dataclass(frozen=True)
class Config:
    config_root: Path
    root: Path = Path("/")
    eprefix: str = "/"
    vars: dict[str, str] = field(default_factory=dict, hash=False)
    package_env_rules: tuple[tuple[Atom, str], ...] = ()
    package_use_rules: tuple[tuple[Atom, tuple[str, ...]], ...] = ()
    global_env: tuple[conffile.Assignment, ...] = ()
    env_files: dict[str, tuple[conffile.Assignment, ...]] = field(default_factory=dict, hash=False)

    @property
    def pm_dir(self) -> Path:
        return self.config_root / "etc" / "pm"

    @property
    def eprefix_value(self) -> str:
        """EPREFIX as exported to builds: empty for no offset."""
        return normalize_eprefix(self.eprefix)

    @property
    def cbuild(self) -> str:
        return self.vars.get("CBUILD") or DEFAULT_CBUILD

    @property
    def chost(self) -> str:
        return self.vars.get("CHOST") or self.cbuild

    @property
    def is_cross(self) -> bool:
        return self.chost != self.cbuild

    @property
    def accept_keywords(self) -> frozenset[str]:
        raw = self.vars.get("ACCEPT_KEYWORDS")
        if raw is None:
            raw = DEFAULT_ACCEPT_KEYWORDS
        return frozenset(raw.split())

    def matching_env_files(self, pkg: PackageId) -> list[str]:
        return [name for atom, name in self.package_env_rules if atom_matches(atom, pkg)]


def _read_rule_file(path: Path):
    """Yield (lineno, atom, rest-tokens) for an ``atom token...`` file."""
    if not path.exists():
        return
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from e
    for lineno, line in enumerate(text.splitlines(), 1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        try:
            atom = parse_atom(tokens[0])
        except ParseError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from e
        yield lineno, atom, tokens[1:]


def load_config(config_root, root="/", eprefix="/") -> Config:
    config_root = Path(config_root)
    pm_dir = config_root / "etc" / "pm"
    make_conf = pm_dir / "make.conf"
    if not make_conf.exists():
        raise ConfigError(f"{make_conf} does not exist")
    variables = conffile.expand_in_order(conffile.read_assignments(make_conf))
    variables.setdefault("FEATURES", DEFAULT_FEATURES)

    global_env = ()
    global_env_path = pm_dir / "global-env.conf"
    if global_env_path.exists():
        global_env = tuple(conffile.read_assignments(global_env_path))

    env_rules = []
    env_files = {}
    for lineno, atom, rest in _read_rule_file(pm_dir / "package.env"):
        if not rest:
            raise ConfigError(f"{pm_dir / 'package.env'}:{lineno}: missing env file name")
        for name in rest:
            env_path = pm_dir / "env" / name
            if not env_path.exists() and not name.endswith(".conf"):
                env_path = pm_dir / "env" / f"{name}.conf"
            if not env_path.exists():
                raise ConfigError(
                    f"{pm_dir / 'package.env'}:{lineno}: env file {name!r} not found")
            if name not in env_files:
                env_files[name] = tuple(conffile.read_assignments(env_path))
            env_rules.append((atom, name))

    use_rules = []
    for _, atom, rest in _read_rule_file(pm_dir / "package.use"):
        use_rules.append((atom, tuple(rest)))

    return Config(
        config_root=config_root,
        root=Path(root),
        eprefix=str(eprefix or "/"),
        vars=variables,
        package_env_rules=tuple(env_rules),
        package_use_rules=tuple(use_rules),
        global_env=global_env,
        env_files=env_files,
    )


def _apply_use_tokens(enabled: set, origin: dict, tokens, source: str):
    for tok in tokens:
        if tok == "-*":
            enabled.clear()
            origin.clear()
        elif tok.startswith("-"):
            enabled.discard(tok[1:])
            origin.pop(tok[1:], None)
        else:
            flag = tok.lstrip("+")
            enabled.add(flag)
            origin[flag] = source


def compute_use(config: Config, recipe) -> EffectiveUse:
    enabled = set(recipe.iuse_defaults)
    origin = {f: "default" for f in enabled}
    _apply_use_tokens(enabled, origin, config.vars.get("USE", "").split(), "global")
    # package.env files may carry their own USE, layered after make.conf
    for name in config.matching_env_files(recipe.id):
        env_use = _expand_env_file(config, name, {}).get("USE")
        if env_use is not None:
            _apply_use_tokens(enabled, origin, env_use.split(), "package")
    for atom, tokens in config.package_use_rules:
        if atom_matches(atom, recipe.id):
            _apply_use_tokens(enabled, origin, tokens, "package")
    dropped = enabled - recipe.iuse
    if dropped:
        log.debug("%s: ignoring flags not in IUSE: %s", recipe.id.cpv, " ".join(sorted(dropped)))
    final = frozenset(enabled & recipe.iuse)
    return EffectiveUse(final, {f: origin[f] for f in final})


def _expand_env_file(config: Config, name: str, scope: dict) -> dict:
    """Evaluate one env file on top of ``scope``; returns only the keys it sets."""
    merged = dict(scope)
    changed = {}
    for a in config.env_files[name]:
        merged[a.key] = changed[a.key] = a.expand(merged)
    return changed


def _merge_features(*values: str) -> str:
    tokens = []
    for value in values:
        for tok in value.split():
            if tok not in tokens:
                tokens.append(tok)
    return " ".join(tokens)


def build_environment(config: Config, recipe, use: EffectiveUse | None = None,
                      workdir=None, image=None) -> dict[str, str]:
    env = dict(config.vars)
    for a in config.global_env:
        value = a.expand(env)
        if a.key == "FEATURES":
            value = _merge_features(env.get("FEATURES", ""), value)
        env[a.key] = value
    for name in config.matching_env_files(recipe.id):
        for key, value in _expand_env_file(config, name, env).items():
            if key == "FEATURES":
                value = _merge_features(env.get("FEATURES", ""), value)
            env[key] = value

    env.setdefault("CBUILD", config.cbuild)
    env.setdefault("CHOST", config.chost)
    if use is None:
        use = compute_use(config, recipe)
    env["USE"] = str(use)
    env["EPREFIX"] = config.eprefix_value
    env["ROOT"] = str(config.root)
    env["CATEGORY"] = recipe.id.category
    env["PN"] = recipe.id.name
    env["PV"] = str(recipe.id.version)
    env["SLOT"] = recipe.slot
    if workdir is not None:
        env["S"] = str(workdir)
    if image is not None:
        env["D"] = str(image)
    return env


def env_snapshot(env: dict[str, str]) -> dict[str, str]:
    return {k: env.get(k, "") for k in SNAPSHOT_KEYS}


def find_user_patches(config: Config, pkg: PackageId) -> list[Path]:
    base = config.pm_dir / "patches" / pkg.category
    found = []
    for directory in (base / pkg.name, base / f"{pkg.name}-{pkg.version}"):
        if not directory.is_dir():
            continue
        names = sorted((n for n in os.listdir(directory) if (directory / n).is_file()),
                       key=bytes_key)
        found.extend(directory / n for n in names)
    return found
