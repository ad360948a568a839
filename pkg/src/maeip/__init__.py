"""CSformer image restoration with MAEIP masked pre-training, on a numpy autograd."""

from .errors import CheckpointError, ConfigError, MaeipError, MaskError, ShapeError, TapeError

__version__ = "0.1.0"
__all__ = ["CheckpointError", "ConfigError", "MaeipError", "MaskError", "ShapeError", "TapeError", "__version__"]
