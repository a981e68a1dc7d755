"""Built-in command interpreter for recipe phases, plus the toy toolchain.

Recipes never go through a shell. Each line is split on whitespace (double
quotes group words), ``${VAR}`` is expanded from the build environment, and
the first word picks a built-in::

    toycc <in>... -o <out>        compile into a ToyArtifact for $CHOST
    install-file [-m MODE] <src> <dst>
    make-dir <dst>
    make-sym <target> <link>
    echo-to <file> <text>...
    fail <message>...

Anything else runs as an external process in ``$S``. Built-ins refuse to
write outside ``$S``, ``$D`` and the distfiles cache.
"""

from __future__ import annotations

import fnmatch
import os
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .conffile import _VAR_RE
from .config import EffectiveUse
from .errors import CommandError, FormatError, ParseError, SandboxViolation

TOY_MAGIC = b"!TOYOBJ 1\n"
TOY_DEBUG_MAGIC = b"!TOYDEBUG 1\n"


@dataclass
class BuildContext:
    S: Path
    D: Path
    env: dict[str, str]
    use: EffectiveUse
    target_root: Path
    eprefix: str
    chost: str
    cbuild: str
    distdir: Path | None = None
    recipe_dir: Path | None = None
    user_patches: list[Path] = field(default_factory=list)
    output: list[str] = field(default_factory=list)

    def writable_roots(self) -> list[Path]:
        roots = [self.S, self.D]
        if self.distdir is not None:
            roots.append(self.distdir)
        return [Path(os.path.realpath(r)) for r in roots]


def tokenize(line: str, env: dict[str, str]) -> list[str]:
    words: list[str] = []
    buf: list[str] = []
    in_word = False
    in_quote = False
    for c in line:
        if c == '"':
            in_quote = not in_quote
            in_word = True
        elif c.isspace() and not in_quote:
            if in_word:
                words.append("".join(buf))
                buf = []
                in_word = False
        else:
            buf.append(c)
            in_word = True
    if in_quote:
        raise ParseError("unterminated double quote", line, len(line))
    if in_word:
        words.append("".join(buf))
    return [_VAR_RE.sub(lambda m: env.get(m.group(1) or m.group(2), ""), w) for w in words]


def _inside(path: Path, roots: list[Path]) -> bool:
    real = Path(os.path.realpath(path))
    return any(real == r or r in real.parents for r in roots)


def _write_target(ctx: BuildContext, raw: str) -> Path:
    path = Path(raw)
    if not path.is_absolute():
        path = ctx.S / path
    if not _inside(path, ctx.writable_roots()):
        raise SandboxViolation(f"write outside the sandbox: {raw}")
    return path


def _read_source(ctx: BuildContext, raw: str) -> Path:
    path = Path(raw)
    if path.is_absolute():
        candidates = [path]
    else:
        candidates = [ctx.S / path]
        if ctx.recipe_dir is not None:
            candidates.append(ctx.recipe_dir / path)
    for c in candidates:
        if c.exists() or c.is_symlink():
            return c
    raise CommandError(f"no such file: {raw}")


def toy_compile(sources: list[bytes], chost: str, cflags: str) -> bytes:
    for src in sources:
        for line in src.splitlines():
            text = line.decode("utf-8", "replace").strip()
            if text.startswith("#error-on "):
                _, pattern, *msg = text.split()
                if fnmatch.fnmatchcase(chost, pattern):
                    raise CommandError(" ".join(msg) or f"unsupported target {chost}")
            elif text.startswith("#error"):
                raise CommandError(text[len("#error"):].strip() or "#error")
    header = f"MACHINE: {chost}\nCFLAGS: {cflags.strip()}\n\n".encode()
    return TOY_MAGIC + header + b"".join(sources)


def _wants_debug(cflags: str) -> bool:
    return any(t.startswith("-g") and t != "-g0" for t in cflags.split())


def inspect_machine(path) -> str:
    with open(path, "rb") as f:
        head = f.read(4096)
    if not head.startswith(TOY_MAGIC):
        raise FormatError(f"{path}: not a toy object (bad magic)")
    for line in head[len(TOY_MAGIC):].split(b"\n"):
        if not line:
            break
        key, _, value = line.decode("utf-8", "replace").partition(": ")
        if key == "MACHINE":
            return value
    raise FormatError(f"{path}: toy object has no MACHINE header")


def _arity(args, lo, hi, usage):
    if not lo <= len(args) <= hi:
        raise CommandError(f"usage: {usage}")


def interpret_command(line: str, ctx: BuildContext) -> int:
    words = tokenize(line, ctx.env)
    if not words:
        return 0
    cmd, args = words[0], words[1:]

    if cmd == "toycc":
        if "-o" not in args:
            raise CommandError("usage: toycc <in>... -o <out>")
        k = args.index("-o")
        inputs, rest = args[:k], args[k + 1:]
        if not inputs or len(rest) != 1:
            raise CommandError("usage: toycc <in>... -o <out>")
        out = _write_target(ctx, rest[0])
        cflags = ctx.env.get("CFLAGS", "")
        data = toy_compile([_read_source(ctx, i).read_bytes() for i in inputs], ctx.chost, cflags)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(data)
        os.chmod(out, 0o755)
        if _wants_debug(cflags):
            dbg = _write_target(ctx, rest[0] + ".debug")
            dbg.write_bytes(TOY_DEBUG_MAGIC + f"MACHINE: {ctx.chost}\n".encode()
                            + b"SYMBOLS: " + " ".join(inputs).encode() + b"\n")
        return 0

    if cmd == "install-file":
        mode = None
        if args[:1] == ["-m"]:
            if len(args) < 2:
                raise CommandError("usage: install-file [-m MODE] <src> <dst>")
            try:
                mode = int(args[1], 8)
            except ValueError:
                raise CommandError(f"bad mode {args[1]!r}") from None
            args = args[2:]
        _arity(args, 2, 2, "install-file [-m MODE] <src> <dst>")
        src = _read_source(ctx, args[0])
        dst = _write_target(ctx, args[1])
        if src.is_dir():
            raise CommandError(f"install-file: {args[0]} is a directory")
        dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dst)
        os.chmod(dst, mode if mode is not None else (src.stat().st_mode & 0o7777))
        return 0

    if cmd == "make-dir":
        _arity(args, 1, 1, "make-dir <dst>")
        _write_target(ctx, args[0]).mkdir(parents=True, exist_ok=True)
        return 0

    if cmd == "make-sym":
        _arity(args, 2, 2, "make-sym <target> <link>")
        raw = Path(args[1])
        # check the directory, not the link: an existing link may point anywhere
        link = _write_target(ctx, str(raw.parent)) / raw.name
        link.parent.mkdir(parents=True, exist_ok=True)
        if link.is_symlink() or link.exists():
            link.unlink()
        os.symlink(args[0], link)
        return 0

    if cmd == "echo-to":
        if not args:
            raise CommandError("usage: echo-to <file> <text>...")
        dst = _write_target(ctx, args[0])
        dst.parent.mkdir(parents=True, exist_ok=True)
        dst.write_bytes((" ".join(args[1:]) + "\n").encode("utf-8"))
        return 0

    if cmd == "fail":
        raise CommandError(" ".join(args) or "fail")

    env = dict(ctx.env)
    env.setdefault("PATH", os.environ.get("PATH", "/usr/bin:/bin"))
    try:
        proc = subprocess.run(words, cwd=ctx.S, env=env, capture_output=True)
    except FileNotFoundError:
        raise CommandError(f"command not found: {cmd}") from None
    except PermissionError:
        raise CommandError(f"permission denied: {cmd}") from None
    out = (proc.stdout + proc.stderr).decode("utf-8", "replace")
    if out:
        ctx.output.append(out)
    return proc.returncode
