import contextlib
import fcntl
import hashlib
import os
import tempfile
from pathlib import Path


@contextlib.contextmanager
def file_lock(path):
    """Exclusive advisory lock held for the duration of the block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
    try:
        fcntl.flock(fd, fcntl.LOCK_EX)
        yield
    finally:
        fcntl.flock(fd, fcntl.LOCK_UN)
        os.close(fd)


def atomic_write(path, data, mode=0o644):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, mode)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def join_root(root, *parts) -> Path:
    """Join absolute-looking path fragments under ``root`` (``/usr`` -> root/usr)."""
    out = Path(root)
    for p in parts:
        p = str(p).lstrip("/")
        if p:
            out = out / p
    return out


def normalize_eprefix(eprefix) -> str:
    """``/`` and empty both mean "no offset"; everything else has no trailing slash."""
    eprefix = str(eprefix or "/")
    if not eprefix.startswith("/"):
        raise ValueError(f"EPREFIX must be absolute, got {eprefix!r}")
    return eprefix.rstrip("/")


def bytes_key(name: str) -> bytes:
    return os.fsencode(name)
