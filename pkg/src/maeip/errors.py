"""Exception hierarchy shared by every maeip subpackage."""


class MaeipError(Exception):
    """Base class for all errors raised by maeip."""


class ShapeError(MaeipError, ValueError):
    """A tensor shape, broadcast or divisibility precondition was violated."""


class TapeError(MaeipError, RuntimeError):
    """Backward was called on a non-scalar, detached or already consumed graph."""


class CheckpointError(MaeipError):
    """A checkpoint file is corrupt, truncated or written by another format version."""


class ConfigError(MaeipError, ValueError):
    """A configuration value or key is invalid."""


class MaskError(MaeipError, ValueError):
    """A masking request cannot be satisfied (e.g. encoder loss with an empty mask)."""


class ImageError(MaeipError, ValueError):
    """A file could not be decoded as a PNG image."""
