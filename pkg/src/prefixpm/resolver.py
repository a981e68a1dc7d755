"""Dependency resolution: conditional expansion, closure, ordering, rebuilds.

The resolver is greedy (no backtracking). DEPEND and RDEPEND edges must be
satisfied by an earlier plan action or an installed package; PDEPEND edges
only require the provider to be somewhere in the plan, which is what lets
them break cycles.
"""

from __future__ import annotations

import heapq
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .atoms import Atom, PackageId, atom_matches, parse_atom
from .config import Config, EffectiveUse, build_environment, compute_use, env_snapshot
from .depexpr import parse_dep_expr, reduce_expr
from .errors import CycleError, PMError, ResolutionError, SlotConflictError
from .repository import Recipe, Repository, best_match, find_recipes, resolve_category
from .vdb import Vdb

log = logging.getLogger(__name__)

DEP_KINDS = ("depend", "rdepend", "pdepend")
REASONS = ("target", "changed-use-rebuild", "depend", "rdepend", "pdepend")
_REASON_RANK = {r: i for i, r in enumerate(REASONS)}


@dataclass(frozen=True)
class Action:
    recipe: Recipe
    use: EffectiveUse
    reason: str
    target_root: Path

    @property
    def id(self) -> PackageId:
        return self.recipe.id

    def render(self) -> str:
        pkg = self.recipe.id
        return f'{self.reason} {pkg.cpv}:{pkg.slot} USE="{self.use}" -> {self.target_root}'


@dataclass
class BuildPlan:
    actions: list[Action] = field(default_factory=list)
    # cpv -> {kind: [provider cpv, ...]} for providers inside the plan
    edges: dict[str, dict[str, list[str]]] = field(default_factory=dict)

    def __iter__(self):
        return iter(self.actions)

    def __len__(self):
        return len(self.actions)

    def render(self) -> str:
        return "".join(a.render() + "\n" for a in self.actions)

    def ids(self) -> list[PackageId]:
        return [a.id for a in self.actions]


@dataclass(frozen=True)
class SlotConflict:
    category: str
    name: str
    slot: str
    versions: tuple[str, ...]

    def __str__(self):
        return f"{self.category}/{self.name}:{self.slot} wanted at {', '.join(self.versions)}"


def expand_dependencies(recipe: Recipe, use: EffectiveUse, is_installed=None,
                        is_available=None) -> tuple[list[Atom], list[Atom], list[Atom]]:
    enabled = use.enabled if isinstance(use, EffectiveUse) else frozenset(use)
    out = []
    for kind in DEP_KINDS:
        tree = parse_dep_expr(getattr(recipe, kind))
        try:
            out.append(reduce_expr(tree, enabled, is_installed, is_available))
        except ResolutionError as e:
            raise ResolutionError(f"{recipe.id.cpv} {kind.upper()}: {e}") from e
    return tuple(out)


class _Node:
    __slots__ = ("recipe", "use", "reason", "deps")

    def __init__(self, recipe, use, reason):
        self.recipe = recipe
        self.use = use
        self.reason = reason
        self.deps: dict[str, list[str]] = {k: [] for k in DEP_KINDS}


def _installed_use_matches(entry, config, repos) -> bool:
    recipe = _exact_recipe(entry.id, repos)
    if recipe is None:
        return True
    return compute_use(config, recipe).enabled == entry.use


def _exact_recipe(pkg: PackageId, repos) -> Recipe | None:
    atom = Atom(pkg.name, pkg.category, "=", pkg.version)
    for recipe in find_recipes(atom, repos):
        if recipe.id.version == pkg.version:
            return recipe
    # the shadowing tree may lack this version; look everywhere
    for repo in repos:
        for recipe in repo.recipes(pkg.cp):
            if recipe.id.version == pkg.version:
                return recipe
    return None


def solve(targets, config: Config, host_vdb: Vdb, target_vdb: Vdb, repos: list[Repository],
          *, rebuild=(), reinstall_targets: bool = False) -> BuildPlan:
    """Compute the ordered build plan for ``targets``.

    ``rebuild`` lists installed packages to rebuild regardless of whether
    anything needs them (changed-use rebuilds); ``reinstall_targets`` forces
    an action for targets that are already installed.
    """
    target_root = Path(config.root)
    accept = config.accept_keywords
    nodes: dict[str, _Node] = {}
    slot_index: dict[tuple[str, str, str], str] = {}
    use_cache: dict[str, EffectiveUse] = {}
    queue: deque[str] = deque()

    def use_for(recipe):
        key = recipe.id.cpv
        if key not in use_cache:
            use_cache[key] = compute_use(config, recipe)
        return use_cache[key]

    def installed_for(kind):
        if kind == "depend" and config.is_cross:
            return lambda a: host_vdb.satisfies(a) or target_vdb.satisfies(a)
        return target_vdb.satisfies

    def available(atom):
        try:
            best_match(atom, repos, accept)
            return True
        except PMError:
            return False

    def in_plan(atom) -> str | None:
        for cpv, node in nodes.items():
            if atom_matches(atom, node.recipe.id, node.use.enabled):
                return cpv
        return None

    def add(recipe, reason) -> str:
        pkg = recipe.id
        key = (pkg.category, pkg.name, pkg.slot)
        cpv = pkg.cpv
        if cpv in nodes:
            node = nodes[cpv]
            if _REASON_RANK[reason] < _REASON_RANK[node.reason]:
                node.reason = reason
            return cpv
        other = slot_index.get(key)
        if other is not None and other != cpv:
            raise SlotConflictError([SlotConflict(pkg.category, pkg.name, pkg.slot,
                                                  tuple(sorted([other, cpv])))])
        slot_index[key] = cpv
        nodes[cpv] = _Node(recipe, use_for(recipe), reason)
        queue.append(cpv)
        return cpv

    def pick(atom, context) -> Recipe:
        recipe = best_match(atom, repos, accept)
        if atom.use_deps and not atom_matches(atom, recipe.id, use_for(recipe).enabled):
            raise ResolutionError(
                f"{context}: {atom} requires USE that {recipe.id.cpv} does not have enabled")
        return recipe

    for raw in targets:
        atom = resolve_category(raw if isinstance(raw, Atom) else parse_atom(raw), repos)
        existing = in_plan(atom)
        if existing:
            add(nodes[existing].recipe, "target")
            continue
        if not reinstall_targets:
            installed = target_vdb.match(atom)
            if any(_installed_use_matches(e, config, repos) for e in installed):
                continue
        add(pick(atom, "target"), "target")

    for pkg in sorted(rebuild, key=lambda p: p.sort_key()):
        recipe = _exact_recipe(pkg, repos)
        if recipe is None:
            log.warning("%s: recipe no longer in the tree; not rebuilding", pkg.cpv)
            continue
        add(recipe, "changed-use-rebuild")

    while queue:
        cpv = queue.popleft()
        node = nodes[cpv]
        kinds = {}
        for kind in DEP_KINDS:
            tree = parse_dep_expr(getattr(node.recipe, kind))
            try:
                kinds[kind] = reduce_expr(tree, node.use.enabled, installed_for(kind), available)
            except ResolutionError as e:
                raise ResolutionError(f"{cpv} {kind.upper()}: {e}") from e
        for kind in DEP_KINDS:
            for atom in kinds[kind]:
                atom = resolve_category(atom, repos)
                provider = in_plan(atom)
                if provider is None:
                    if installed_for(kind)(atom):
                        continue
                    provider = add(pick(atom, cpv), kind)
                else:
                    add(nodes[provider].recipe, kind)
                if provider not in node.deps[kind]:
                    node.deps[kind].append(provider)

    order = _order(nodes)
    plan = BuildPlan(
        actions=[Action(nodes[c].recipe, nodes[c].use, nodes[c].reason, target_root)
                 for c in order],
        edges={c: {k: list(v) for k, v in nodes[c].deps.items()} for c in order},
    )
    conflicts = check_slot_conflicts(plan, None)
    if conflicts:
        raise SlotConflictError(conflicts)
    return plan


def _order(nodes: dict[str, _Node]) -> list[str]:
    """Kahn's algorithm; PDEPEND-only packages are pushed as late as possible."""
    before: dict[str, set[str]] = {c: set() for c in nodes}
    after: dict[str, set[str]] = {c: set() for c in nodes}
    for cpv, node in nodes.items():
        for kind in ("depend", "rdepend"):
            for dep in node.deps[kind]:
                if dep == cpv and kind == "rdepend":
                    continue
                before[cpv].add(dep)
                after[dep].add(cpv)

    def key(c):
        n = nodes[c]
        pkg = n.recipe.id
        return (n.reason == "pdepend", pkg.category, pkg.name, str(pkg.version), c)

    pending = {c: len(before[c]) for c in nodes}
    heap = [key(c) for c, count in pending.items() if count == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        c = heapq.heappop(heap)[-1]
        order.append(c)
        for nxt in sorted(after[c]):
            pending[nxt] -= 1
            if pending[nxt] == 0:
                heapq.heappush(heap, key(nxt))
    if len(order) != len(nodes):
        raise CycleError(_find_cycle({c for c in nodes if pending[c] > 0}, before))
    return order


def _find_cycle(remaining: set[str], before: dict[str, set[str]]) -> list[str]:
    start = min(remaining)
    path: list[str] = []
    index: dict[str, int] = {}
    node = start
    while node not in index:
        index[node] = len(path)
        path.append(node)
        node = min(d for d in before[node] if d in remaining)
    cycle = path[index[node]:] + [node]
    # cycle lists dependents before their dependencies
    return cycle


def check_slot_conflicts(plan: BuildPlan, vdb: Vdb | None) -> list[SlotConflict]:
    """Two distinct versions wanted in one slot by the plan itself conflict.

    An installed version in the same slot is replaced (an upgrade or
    downgrade), so the VDB never contributes a conflict on its own.
    """
    wanted: dict[tuple[str, str, str], list[str]] = {}
    for action in plan.actions:
        pkg = action.id
        versions = wanted.setdefault((pkg.category, pkg.name, pkg.slot), [])
        if pkg.cpv not in versions:
            versions.append(pkg.cpv)
    conflicts = []
    for (cat, name, slot), versions in sorted(wanted.items()):
        if len(versions) > 1:
            conflicts.append(SlotConflict(cat, name, slot, tuple(sorted(versions))))
    return conflicts


def replaced_entries(plan: BuildPlan, vdb: Vdb) -> list[tuple[PackageId, PackageId]]:
    """(installed, incoming) pairs where a plan action replaces an installed slot."""
    out = []
    for action in plan.actions:
        pkg = action.id
        for entry in vdb.same_slot(pkg.category, pkg.name, pkg.slot):
            if entry.id.version != pkg.version:
                out.append((entry.id, pkg))
    return out


def changed_use_rebuilds(config: Config, vdb: Vdb, repos: list[Repository],
                         compare_env: bool = True) -> list[PackageId]:
    """Installed packages whose configuration no longer matches what they were built with.

    A package qualifies when its recorded USE differs from the USE the current
    configuration computes for it, or (with ``compare_env``) when its recorded
    CFLAGS/CXXFLAGS/LDFLAGS/FEATURES/CC differ from its current build
    environment. Reverse dependencies are never added.
    """
    out = []
    for entry in vdb.entries():
        recipe = _exact_recipe(entry.id, repos)
        if recipe is None:
            log.warning("%s: installed but its recipe vanished; skipped", entry.id.cpv)
            continue
        use = compute_use(config, recipe)
        changed = use.enabled != entry.use
        if not changed and compare_env and entry.build_env:
            now = env_snapshot(build_environment(config, recipe, use))
            changed = any(entry.build_env.get(k) != now[k] for k in now if k in entry.build_env)
        if changed:
            out.append(entry.id)
    return out
