"""Exception hierarchy shared by every samlab module."""

from __future__ import annotations


class SamlabError(Exception):
    """Base class for all samlab errors."""


class ConfigError(SamlabError, ValueError):
    """A configuration or spec failed validation."""


class ShapeError(SamlabError, ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op: str, left, right, detail: str = ""):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        msg = f"{op}: incompatible shapes {self.left} and {self.right}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(SamlabError, FloatingPointError):
    """A loss, gradient or probe value was NaN or infinite.

    ``context`` carries whatever locates the failure (step, shard, coordinate
    or parameter name).
    """

    def __init__(self, message: str, **context):
        self.context = context
        if context:
            extra = ", ".join(f"{k}={v!r}" for k, v in context.items())
            message = f"{message} [{extra}]"
        super().__init__(message)


class UsageError(SamlabError, RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""


class LengthMismatchError(SamlabError, ValueError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"flat length {got} does not match template length {expected}")


class CheckpointError(SamlabError):
    """Base class for checkpoint decoding failures."""


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class RangeError(SamlabError, ValueError):
    """An integer label or token id falls outside its declared range."""

    def __init__(self, what: str, value: int, upper: int):
        self.what = what
        self.value = value
        self.upper = upper
        super().__init__(f"{what} {value} outside [0, {upper})")
