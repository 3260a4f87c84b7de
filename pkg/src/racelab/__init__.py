"""Procedural racing environment with lidar sensing and baseline actor-critic agents."""

from .environment import EnvConfig, Racer
from .track import TrackConfig, generate_track

__version__ = "0.1.0"

__all__ = ["EnvConfig", "Racer", "TrackConfig", "generate_track", "__version__"]
