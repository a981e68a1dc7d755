"""Dependency expression trees: all-of groups, any-of groups, USE conditionals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Union

from .atoms import Atom, parse_atom
from .errors import ParseError, ResolutionError


@dataclass(frozen=True)
class AllOf:
    children: tuple[Node, ...]


@dataclass(frozen=True)
class AnyOf:
    children: tuple[Node, ...]


@dataclass(frozen=True)
class Conditional:
    flag: str
    children: tuple[Node, ...]
    negated: bool = False


@dataclass(frozen=True)
class Leaf:
    atom: Atom


Node = Union[AllOf, AnyOf, Conditional, Leaf]


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        start = i
        while i < n and not text[i].isspace():
            i += 1
        tokens.append((text[start:i], start))
    return tokens


def parse_dep_expr(text: str) -> AllOf:
    tokens = _tokenize(text)
    pos = 0

    def parse_group(closing: bool, open_at: int) -> tuple[Node, ...]:
        nonlocal pos
        children: list[Node] = []
        while pos < len(tokens):
            tok, at = tokens[pos]
            if tok == ")":
                if not closing:
                    raise ParseError("unbalanced ')'", text, at)
                pos += 1
                return tuple(children)
            pos += 1
            if tok == "(":
                children.append(AllOf(parse_group(True, at)))
            elif tok == "||":
                opener = _expect_open(at)
                children.append(AnyOf(parse_group(True, opener)))
            elif tok.endswith("?"):
                flag = tok[:-1]
                negated = flag.startswith("!")
                if negated:
                    flag = flag[1:]
                if not flag:
                    raise ParseError("empty USE conditional", text, at)
                opener = _expect_open(at)
                children.append(Conditional(flag, parse_group(True, opener), negated))
            else:
                try:
                    children.append(Leaf(parse_atom(tok)))
                except ParseError as e:
                    raise ParseError(f"malformed atom {tok!r}: {e}", text, at) from e
        if closing:
            raise ParseError("unbalanced '('", text, open_at)
        return tuple(children)

    def _expect_open(at: int) -> int:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos][0] != "(":
            raise ParseError(f"{tokens[pos - 1][0]!r} must be followed by a group", text, at)
        opener = tokens[pos][1]
        pos += 1
        return opener

    return AllOf(parse_group(False, 0))


def render_dep_expr(node: Node) -> str:
    """Render a tree; only the outermost all-of group goes without parentheses."""
    if isinstance(node, Leaf):
        return str(node.atom)
    inner = " ".join(_wrap(c) for c in node.children)
    if isinstance(node, AnyOf):
        return f"|| ( {inner} )"
    if isinstance(node, Conditional):
        bang = "!" if node.negated else ""
        return f"{bang}{node.flag}? ( {inner} )"
    return inner


def _wrap(node: Node) -> str:
    return f"( {render_dep_expr(node)} )" if isinstance(node, AllOf) else render_dep_expr(node)


def conditional_flags(node: Node) -> set[str]:
    if isinstance(node, Leaf):
        return set()
    flags = set()
    if isinstance(node, Conditional):
        flags.add(node.flag)
    for child in node.children:
        flags |= conditional_flags(child)
    return flags


def leaves(node: Node) -> Iterable[Atom]:
    if isinstance(node, Leaf):
        yield node.atom
        return
    for child in node.children:
        yield from leaves(child)


def reduce_expr(
    node: Node,
    use: Iterable[str],
    is_installed: Callable[[Atom], bool] | None = None,
    is_available: Callable[[Atom], bool] | None = None,
) -> list[Atom]:
    """Evaluate conditionals and any-of groups down to a flat atom list.

    Any-of picks the first alternative that is fully installed, otherwise the
    first one that is available (or simply the first when availability is
    unknown).
    """
    use = frozenset(use)

    def walk(n: Node) -> list[Atom]:
        if isinstance(n, Leaf):
            return [n.atom]
        if isinstance(n, Conditional):
            if (n.flag in use) == n.negated:
                return []
            return [a for c in n.children for a in walk(c)]
        if isinstance(n, AllOf):
            return [a for c in n.children for a in walk(c)]
        # any-of
        options = [walk(c) for c in n.children]
        options = [o for o in options if o]
        if not options:
            raise ResolutionError(f"no satisfiable alternative in {_wrap(n)}")
        if is_installed is not None:
            for opt in options:
                if all(is_installed(a) for a in opt):
                    return opt
        if is_available is not None:
            usable = [o for o in options
                      if all(is_available(a) or (is_installed and is_installed(a)) for a in o)]
            if not usable:
                raise ResolutionError(f"no satisfiable alternative in {_wrap(n)}")
            return usable[0]
        return options[0]

    return walk(node)
