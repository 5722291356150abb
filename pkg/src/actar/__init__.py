"""Key-actor action recognition over pose tracks and video frames."""

from .errors import ActarError, ConfigError, DataError, StageError

__version__ = "0.1.0"

__all__ = ["ActarError", "ConfigError", "DataError", "StageError", "__version__"]
