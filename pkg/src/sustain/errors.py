"""Exception types shared across the package."""


class SustainError(Exception):
    """Base class for all package errors."""


class ShapeError(SustainError, ValueError):
    """Operand shapes do not agree."""


class GeometryError(SustainError, ValueError):
    """A bag or kernel is too short for the configured convolution geometry."""


class UsageError(SustainError, RuntimeError):
    """An API was called in the wrong order or state."""


class ConvexityError(SustainError, ValueError):
    """Blending weights are negative or do not sum to one."""

    def __init__(self, alphas, total):
        self.alphas = list(alphas)
        self.total = total
        super().__init__(f"blend weights must be non-negative and sum to 1, got {self.alphas} (sum={total!r})")


class FormatError(SustainError, ValueError):
    """A file on disk does not follow the expected layout."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = ""
        if path is not None:
            where += f" in {path}"
        if offset is not None:
            where += f" at offset {offset}"
        super().__init__(message + where)


class MagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class LabelColumnError(FormatError):
    pass


class ArchitectureMismatch(SustainError, ValueError):
    """A saved model does not fit the requested architecture."""


class ConfigError(SustainError, ValueError):
    """An experiment configuration failed validation."""
