"""Reset Replay preference optimization over a small neural n-gram policy."""

from .config import RunConfig
from .errors import ConfigError
from .replay import run_training

__all__ = ["RunConfig", "ConfigError", "run_training"]
__version__ = "0.1.0"
