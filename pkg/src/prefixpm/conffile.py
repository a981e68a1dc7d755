"""Parser for the shell-like ``KEY="value"`` files used throughout ``etc/pm``.

Supported syntax is the subset make.conf files actually use: double quotes
(with ``${VAR}``/``$VAR`` expansion, backslash-newline continuation and
``\\"``/``\\$``/``\\\\`` escapes), single quotes (literal), bare words, and
``#`` comments outside quotes. Expansion happens later, against whatever
scope the caller layers up.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

from .errors import ConfigError

_KEY_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_VAR_RE = re.compile(r"\$(?:\{([A-Za-z_][A-Za-z0-9_]*)\}|([A-Za-z_][A-Za-z0-9_]*))")


@dataclass(frozen=True)
class Assignment:
    key: str
    parts: tuple[tuple[str, str], ...]  # ("lit", text) | ("var", name)
    lineno: int

    def expand(self, scope: Mapping[str, str]) -> str:
        return "".join(
            text if kind == "lit" else scope.get(text, "")
            for kind, text in self.parts
        )

    def literal(self) -> str:
        """The value with variable references left as written."""
        return "".join(
            text if kind == "lit" else "${" + text + "}" for kind, text in self.parts
        )


def _add_lit(parts, text):
    if not text:
        return
    if parts and parts[-1][0] == "lit":
        parts[-1] = ("lit", parts[-1][1] + text)
    else:
        parts.append(("lit", text))


def _scan_vars(segment, parts):
    last = 0
    for m in _VAR_RE.finditer(segment):
        _add_lit(parts, segment[last:m.start()])
        parts.append(("var", m.group(1) or m.group(2)))
        last = m.end()
    _add_lit(parts, segment[last:])


def parse_value(text: str, i: int, filename: str, lineno: int):
    """Parse one value starting at ``text[i]``; return (parts, new_index, new_lineno)."""
    parts: list[tuple[str, str]] = []
    n = len(text)
    while i < n:
        c = text[i]
        if c == '"':
            i += 1
            buf = []
            while True:
                if i >= n:
                    raise ConfigError(f"{filename}:{lineno}: unterminated double quote")
                c = text[i]
                if c == '"':
                    i += 1
                    break
                if c == "\\" and i + 1 < n:
                    nxt = text[i + 1]
                    if nxt == "\n":
                        lineno += 1
                        i += 2
                        continue
                    if nxt in '"\\$`':
                        _scan_vars("".join(buf), parts)
                        buf = []
                        _add_lit(parts, nxt)
                        i += 2
                        continue
                if c == "\n":
                    lineno += 1
                buf.append(c)
                i += 1
            _scan_vars("".join(buf), parts)
        elif c == "'":
            end = text.find("'", i + 1)
            if end < 0:
                raise ConfigError(f"{filename}:{lineno}: unterminated single quote")
            chunk = text[i + 1:end]
            lineno += chunk.count("\n")
            _add_lit(parts, chunk)
            i = end + 1
        elif c.isspace() or c == "#":
            break
        elif c == "\\":
            if i + 1 < n and text[i + 1] == "\n":
                lineno += 1
            elif i + 1 < n:
                _add_lit(parts, text[i + 1])
            i += 2
        else:
            start = i
            while i < n and not (text[i].isspace() or text[i] in "\"'#\\"):
                i += 1
            _scan_vars(text[start:i], parts)
    return tuple(parts), i, lineno


def parse_assignment_line(text: str, i: int, filename: str, lineno: int):
    """Parse ``KEY=value`` at ``i``; returns (Assignment, new_index, new_lineno)."""
    n = len(text)
    if text.startswith("export ", i):
        i += len("export ")
        while i < n and text[i] in " \t":
            i += 1
    m = _KEY_RE.match(text, i)
    if not m or m.end() >= n or text[m.end()] != "=":
        end = text.find("\n", i)
        line = text[i:end if end >= 0 else n]
        raise ConfigError(f"{filename}:{lineno}: expected KEY=value, got {line!r}")
    key = m.group(0)
    start_line = lineno
    parts, i, lineno = parse_value(text, m.end() + 1, filename, lineno)
    # rest of the line may only hold whitespace and a comment
    while i < n and text[i] in " \t":
        i += 1
    if i < n and text[i] == "#":
        while i < n and text[i] != "\n":
            i += 1
    if i < n and text[i] != "\n":
        raise ConfigError(f"{filename}:{lineno}: trailing characters after value of {key}")
    return Assignment(key, parts, start_line), i, lineno


def parse_assignments(text: str, filename: str = "<string>") -> list[Assignment]:
    out = []
    i, n, lineno = 0, len(text), 1
    while i < n:
        c = text[i]
        if c == "\n":
            lineno += 1
            i += 1
        elif c in " \t\r":
            i += 1
        elif c == "#":
            while i < n and text[i] != "\n":
                i += 1
        else:
            assignment, i, lineno = parse_assignment_line(text, i, filename, lineno)
            out.append(assignment)
    return out


def read_assignments(path) -> list[Assignment]:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from e
    return parse_assignments(text, str(path))


def expand_in_order(assignments, scope: Mapping[str, str] | None = None) -> dict[str, str]:
    """Evaluate assignments in file order; each sees the values defined so far."""
    result = dict(scope or {})
    for a in assignments:
        result[a.key] = a.expand(result)
    return result


def quote(value: str) -> str:
    return '"' + re.sub(r'(["\\$`])', r"\\\1", value) + '"'


def strip_comment(line: str) -> str:
    """Drop a ``#`` comment that is not inside double or single quotes."""
    quote_char = None
    for idx, c in enumerate(line):
        if quote_char:
            if c == quote_char:
                quote_char = None
        elif c in "\"'":
            quote_char = c
        elif c == "#":
            return line[:idx]
    return line
