"""Exception hierarchy shared by the whole package."""


class NetMorphError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(NetMorphError):
    """Tensor or layer shapes are inconsistent with the requested operation."""


class InfeasibleMorphError(NetMorphError):
    """The requested morph cannot be carried out with the given sizes."""


class FormatError(NetMorphError):
    """A serialized file (weight file or IDX dataset) is malformed."""


class ArchParseError(NetMorphError):
    """An architecture notation string does not match the grammar."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at column {position + 1})"
        super().__init__(message)
        self.position = position
