"""Bundled fixture repository, overlays, patches and configuration profiles.

``install_config`` lays down a ready-to-use config root pointing at the
bundled tree; everything else is plain data on disk.
"""

import shutil
from pathlib import Path

HERE = Path(__file__).resolve().parent
TREE = HERE / "tree"
OVERLAYS = HERE / "overlays"
PATCHES = HERE / "patches"
CONFIGS = HERE / "configs"

SYSTEM_SET = (
    "sys-apps/pm-runtime",
    "sys-devel/toy-cc",
    "sys-apps/toy-core",
    "app-shells/toy-sh",
    "sys-libs/toy-libc",
)


def install_config(dest, profile="native", overlays=()):
    """Copy a configuration profile into ``dest`` and register the bundled tree.

    ``overlays`` is a sequence of (name, priority) pairs naming directories
    under ``OVERLAYS``.
    """
    dest = Path(dest)
    shutil.copytree(CONFIGS / profile, dest, dirs_exist_ok=True)
    lines = [f"main = {TREE} 0"]
    lines += [f"{name} = {OVERLAYS / name} {prio}" for name, prio in overlays]
    (dest / "etc" / "pm" / "repos.conf").write_text("\n".join(lines) + "\n")
    return dest
