"""Exception hierarchy shared by every layer of the package manager.

Each family maps to one CLI exit code (see ``EXIT_CODES``).
"""


class PMError(Exception):
    """Base class for all package manager errors."""

    exit_code = 1


# -- exit code 2: malformed input -------------------------------------------

class ParseError(PMError, ValueError):
    exit_code = 2

    def __init__(self, message, text=None, index=None):
        self.text = text
        self.index = index
        if index is not None:
            message = f"{message} (at index {index} in {text!r})"
        super().__init__(message)


class ConfigError(PMError):
    exit_code = 2


class RecipeError(ConfigError):
    pass


class FormatError(PMError):
    """A file is not in the expected on-disk format (e.g. not a toy artifact)."""

    exit_code = 2


# -- exit code 3: resolution --------------------------------------------------

class ResolutionError(PMError):
    exit_code = 3


class NotFoundError(ResolutionError):
    def __init__(self, atom):
        self.atom = atom
        super().__init__(f"no recipe matches {atom}")


class MaskedError(ResolutionError):
    def __init__(self, atom, keywords):
        self.atom = atom
        self.keywords = sorted(keywords)
        super().__init__(
            f"all candidates for {atom} are keyword-masked "
            f"(keywords: {' '.join(self.keywords) or '<none>'})"
        )


class AmbiguousAtomError(ResolutionError):
    def __init__(self, name, candidates):
        self.name = name
        self.candidates = sorted(candidates)
        super().__init__(
            f"short name {name!r} is ambiguous: {', '.join(self.candidates)}"
        )


class CycleError(ResolutionError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("dependency cycle: " + " -> ".join(self.cycle))


class SlotConflictError(ResolutionError):
    def __init__(self, conflicts):
        self.conflicts = list(conflicts)
        super().__init__(
            "slot conflict: " + "; ".join(str(c) for c in self.conflicts)
        )


class NotInstalledError(ResolutionError):
    pass


class SelectError(ResolutionError):
    pass


# -- exit code 4: build -------------------------------------------------------

class BuildError(PMError):
    exit_code = 4


class CommandError(BuildError):
    """A single build command failed."""

    def __init__(self, message, output=""):
        self.output = output
        super().__init__(message)


class SandboxViolation(CommandError):
    pass


class PhaseError(BuildError):
    def __init__(self, phase, lineno, message, output=""):
        self.phase = phase
        self.lineno = lineno
        self.output = output
        super().__init__(f"phase {phase} failed at line {lineno}: {message}")


class PatchError(BuildError):
    def __init__(self, message, path=None, hunk=None):
        self.path = path
        self.hunk = hunk
        super().__init__(message)


class AlreadyAppliedError(PatchError):
    pass


class BootstrapError(BuildError):
    pass


# -- exit code 5: merge -------------------------------------------------------

class MergeError(PMError):
    exit_code = 5


class CollisionError(MergeError):
    def __init__(self, collisions):
        # collisions: list of (path, owner cpv)
        self.collisions = list(collisions)
        lines = ", ".join(f"{p} (owned by {o})" for p, o in self.collisions)
        super().__init__(f"file collision: {lines}")


EXIT_CODES = {
    "ok": 0,
    "parse": 2,
    "resolution": 3,
    "build": 4,
    "merge-collision": 5,
}
