"""prefixpm: a miniature source-based package manager with prefix installs."""

from .atoms import Atom, PackageId, Version, atom_matches, compare_versions, parse_atom, parse_version
from .errors import PMError

__all__ = [
    "Atom", "PackageId", "Version", "atom_matches", "compare_versions", "parse_atom",
    "parse_version", "PMError",
]

__version__ = "0.1.0"
