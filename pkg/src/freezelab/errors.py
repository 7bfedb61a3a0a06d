"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so each family stays distinct.
"""


class FreezeLabError(Exception):
    pass


class ConfigError(FreezeLabError, ValueError):
    """Invalid configuration value (dims, ranges, unknown keys or tags)."""


class UsageError(FreezeLabError, ValueError):
    """A call that violates an operation's preconditions."""


class ShapeError(UsageError):
    """Operand shapes do not agree."""


class AlignmentError(UsageError):
    """Two collections that must match by name or shape do not."""


class NumericalError(FreezeLabError, ArithmeticError):
    def __init__(self, iteration, term, value):
        self.iteration = iteration
        self.term = term
        self.value = value
        super().__init__(f"non-finite {term} ({value}) at iteration {iteration}")


class FormatError(FreezeLabError):
    """Base for binary file format problems."""


class MagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    def __init__(self, record, detail=""):
        self.record = record
        msg = f"file truncated while reading {record}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class ShapeMismatchError(FormatError):
    pass


class CheckpointMismatchError(FreezeLabError):
    """A checkpoint does not fit the architecture requested by the config."""
