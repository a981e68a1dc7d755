"""Unified diff parsing and all-or-nothing application."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AlreadyAppliedError, PatchError

_HUNK_RE = re.compile(rb"@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
NO_NEWLINE = b"\\ No newline at end of file"


@dataclass
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    # (tag, line-with-terminator) where tag is one of b" ", b"-", b"+"
    lines: list[tuple[bytes, bytes]] = field(default_factory=list)

    def old_lines(self) -> list[bytes]:
        return [l for tag, l in self.lines if tag in (b" ", b"-")]

    def new_lines(self) -> list[bytes]:
        return [l for tag, l in self.lines if tag in (b" ", b"+")]

    def reversed(self) -> Hunk:
        swap = {b"-": b"+", b"+": b"-", b" ": b" "}
        return Hunk(self.new_start, self.new_len, self.old_start, self.old_len,
                    [(swap[t], l) for t, l in self.lines])


@dataclass
class FilePatch:
    old_path: str | None  # None for /dev/null
    new_path: str | None
    hunks: list[Hunk] = field(default_factory=list)
    old_mode: int | None = None
    new_mode: int | None = None

    def reversed(self) -> FilePatch:
        return FilePatch(self.new_path, self.old_path, [h.reversed() for h in self.hunks],
                         self.new_mode, self.old_mode)


def _header_path(raw: bytes) -> str | None:
    raw = raw.rstrip(b"\r\n")
    # strip trailing timestamp (tab separated) as written by diff -u
    raw = raw.split(b"\t", 1)[0]
    path = raw.decode("utf-8", "surrogateescape").strip()
    if path == "/dev/null":
        return None
    if len(path) >= 2 and path[0] == path[-1] == '"':
        path = path[1:-1]
    return path


def parse_patch(data: bytes) -> list[FilePatch]:
    lines = data.splitlines(keepends=True)
    patches: list[FilePatch] = []
    pending_modes: dict[str, int] = {}
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith((b"old mode ", b"deleted file mode ")):
            pending_modes["old"] = int(line.split()[-1], 8)
        elif line.startswith((b"new mode ", b"new file mode ")):
            pending_modes["new"] = int(line.split()[-1], 8)
        elif line.startswith(b"diff "):
            pending_modes = {}
        if line.startswith(b"--- ") and i + 1 < len(lines) and lines[i + 1].startswith(b"+++ "):
            fp = FilePatch(_header_path(line[4:]), _header_path(lines[i + 1][4:]),
                           old_mode=pending_modes.get("old"), new_mode=pending_modes.get("new"))
            pending_modes = {}
            i += 2
            while i < len(lines) and lines[i].startswith(b"@@"):
                hunk, i = _parse_hunk(lines, i, len(fp.hunks) + 1, fp)
                fp.hunks.append(hunk)
            patches.append(fp)
            continue
        i += 1
    if not patches:
        raise PatchError("no unified diff headers found")
    return patches


def _parse_hunk(lines, i, number, fp):
    m = _HUNK_RE.match(lines[i])
    if not m:
        raise PatchError(f"malformed hunk header {lines[i]!r}",
                         path=fp.new_path or fp.old_path, hunk=number)
    old_start, old_len, new_start, new_len = (
        int(m.group(1)), int(m.group(2) or 1), int(m.group(3)), int(m.group(4) or 1))
    hunk = Hunk(old_start, old_len, new_start, new_len)
    i += 1
    seen_old = seen_new = 0
    while i < len(lines) and (seen_old < old_len or seen_new < new_len):
        line = lines[i]
        tag = line[:1]
        if line.startswith(NO_NEWLINE):
            _strip_last_newline(hunk)
            i += 1
            continue
        if tag in (b"\n", b"\r"):  # some tools drop the space on empty context lines
            tag, line = b" ", b" " + line
        if tag not in (b" ", b"-", b"+"):
            raise PatchError(f"unexpected line in hunk: {line!r}",
                             path=fp.new_path or fp.old_path, hunk=number)
        hunk.lines.append((tag, line[1:]))
        if tag != b"+":
            seen_old += 1
        if tag != b"-":
            seen_new += 1
        i += 1
    if seen_old != old_len or seen_new != new_len:
        raise PatchError("hunk is truncated", path=fp.new_path or fp.old_path, hunk=number)
    if i < len(lines) and lines[i].startswith(NO_NEWLINE):
        _strip_last_newline(hunk)
        i += 1
    return hunk, i


def _strip_last_newline(hunk):
    tag, body = hunk.lines[-1]
    if body.endswith(b"\r\n"):
        body = body[:-2]
    elif body.endswith(b"\n"):
        body = body[:-1]
    hunk.lines[-1] = (tag, body)
    # a marker after a '-' line may be followed by its '+' counterpart; both are handled


def _strip_path(path: str, strip: int) -> str:
    parts = [p for p in path.split("/") if p not in ("", ".")]
    if len(parts) <= strip:
        raise PatchError(f"cannot strip {strip} components from {path!r}")
    return "/".join(parts[strip:])


def _apply_hunks(original: list[bytes], hunks: list[Hunk], path: str) -> list[bytes] | None:
    """Return patched lines or None plus failing hunk index via exception."""
    out: list[bytes] = []
    cursor = 0
    offset = 0
    for number, hunk in enumerate(hunks, 1):
        old = hunk.old_lines()
        want = hunk.old_start - 1 + offset if hunk.old_len else hunk.old_start + offset
        if not old:
            pos = max(want, cursor)
            if pos > len(original):
                raise _HunkFailed(number)
        else:
            pos = _locate(original, old, want, cursor)
            if pos is None:
                raise _HunkFailed(number)
        out.extend(original[cursor:pos])
        out.extend(hunk.new_lines())
        cursor = pos + len(old)
        offset = pos - (hunk.old_start - 1 if hunk.old_len else hunk.old_start)
    out.extend(original[cursor:])
    return out


class _HunkFailed(Exception):
    def __init__(self, number):
        self.number = number


def _locate(original, old, want, floor):
    """Exact context match nearest to the expected line, never before ``floor``."""
    n = len(old)
    limit = len(original) - n
    if limit < floor:
        return None
    want = min(max(want, floor), limit)
    for delta in range(0, max(want - floor, limit - want) + 1):
        for pos in (want - delta, want + delta):
            if floor <= pos <= limit and original[pos:pos + n] == old:
                return pos
    return None


@dataclass
class PatchResult:
    changed: list[Path] = field(default_factory=list)
    created: list[Path] = field(default_factory=list)
    deleted: list[Path] = field(default_factory=list)


def _plan(patches, workdir: Path, strip: int):
    """Compute new file states in memory; raise on the first failing hunk."""
    staged = {}
    for fp in patches:
        rel = _strip_path(fp.new_path or fp.old_path, strip)
        if fp.old_path is not None and fp.new_path is not None:
            # like patch(1): modify whichever of the two names exists, in place
            old_rel = _strip_path(fp.old_path, strip)
            old_target = workdir / old_rel
            if old_target in staged or (old_target.is_file() and not (workdir / rel).is_file()):
                rel = old_rel
        target = workdir / rel
        if fp.old_path is None:
            if target.exists() and target.stat().st_size:
                raise _FileFailed(rel, 1)
            original = []
        else:
            src = target if fp.new_path is not None else workdir / _strip_path(fp.old_path, strip)
            if src in staged:
                data = staged[src][0]
                original = [] if data is None else data.splitlines(keepends=True)
            elif src.is_file():
                original = src.read_bytes().splitlines(keepends=True)
            else:
                raise _FileFailed(_strip_path(fp.old_path, strip), 1, missing=True)
        try:
            new = _apply_hunks(original, fp.hunks, rel)
        except _HunkFailed as e:
            raise _FileFailed(rel, e.number) from None
        data = None if fp.new_path is None else b"".join(new)
        mode = fp.new_mode
        staged[target] = (data, mode)
    return staged


class _FileFailed(Exception):
    def __init__(self, path, hunk, missing=False):
        self.path = path
        self.hunk = hunk
        self.missing = missing


def apply_patch(patch: bytes, workdir, strip: int = 1, reverse: bool = False) -> PatchResult:
    workdir = Path(workdir)
    patches = parse_patch(patch)
    if reverse:
        patches = [p.reversed() for p in patches]
    try:
        staged = _plan(patches, workdir, strip)
    except _FileFailed as e:
        if not e.missing:
            try:
                _plan([p.reversed() for p in patches], workdir, strip)
            except _FileFailed:
                pass
            else:
                raise AlreadyAppliedError(
                    f"patch appears to be already applied ({e.path})",
                    path=e.path, hunk=e.hunk) from None
        if e.missing:
            raise PatchError(f"{e.path}: file to patch does not exist",
                             path=e.path, hunk=e.hunk) from None
        raise PatchError(f"{e.path}: hunk #{e.hunk} does not apply",
                         path=e.path, hunk=e.hunk) from None

    result = PatchResult()
    for target, (data, mode) in staged.items():
        if data is None:
            if target.exists():
                target.unlink()
                result.deleted.append(target)
            continue
        existed = target.exists()
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(f".{target.name}.pmpatch")
        tmp.write_bytes(data)
        if mode is not None:
            os.chmod(tmp, mode & 0o7777)
        elif existed:
            os.chmod(tmp, target.stat().st_mode & 0o7777)
        os.replace(tmp, target)
        (result.changed if existed else result.created).append(target)
    return result
