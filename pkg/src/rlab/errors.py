"""Exception types shared across the package."""


class RlabError(Exception):
    """Base class for every error raised deliberately by rlab."""


class ShapeError(RlabError, ValueError):
    """Tensor or stream extents do not agree."""


class DomainError(RlabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class FormatError(RlabError):
    """A file on disk does not match its binary layout.

    ``offset`` is the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SimulationError(RlabError):
    """The physics integrator produced an unusable state."""


class ConfigError(RlabError, ValueError):
    """Configuration values are inconsistent with each other or the data."""
