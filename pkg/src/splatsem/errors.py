"""Exception types raised across the package.

Every error derives from :class:`SplatSemError`, which itself is a
``ValueError`` so callers that only care about bad input can catch that.
"""


class SplatSemError(ValueError):
    """Base class for all validated-input failures."""


class ShapeMismatch(SplatSemError):
    pass


class DimensionMismatch(SplatSemError):
    pass


class LengthMismatch(SplatSemError):
    pass


class NonPositiveDepth(SplatSemError):
    pass


class NonPositiveTolerance(SplatSemError):
    pass


class NonPositiveVoxelSize(SplatSemError):
    pass


class EmptyPairSet(SplatSemError):
    pass


class EmptyMask(SplatSemError):
    pass


class NonFiniteComponent(SplatSemError):
    pass


class ConfigError(SplatSemError):
    pass


class InvalidCamera(SplatSemError):
    pass


class ParseError(SplatSemError):
    """Malformed binary or JSON input; ``offset`` is the failing byte position."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InvariantViolation(SplatSemError):
    """A scene primitive breaks a representation invariant; ``index`` names the first one."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"primitive {index}: {message}"
        super().__init__(message)
        self.index = index
