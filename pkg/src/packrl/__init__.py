"""Box belt speed control for a secondary packaging machine with pick-and-place robots."""

from .config import Config, ConfigError, load_config

__version__ = "0.1.0"

__all__ = ["Config", "ConfigError", "load_config", "__version__"]
