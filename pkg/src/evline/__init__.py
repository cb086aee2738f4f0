"""Streaming line tracking for event cameras.

Events flow through a refractory + neighborhood filter, then try to join a
tracked line, then a candidate cluster; leftovers seed chains that may
become new clusters. Clusters promote to lines by spatio-temporal plane
fit, and lines move through an initialization / active / hibernated state
machine under periodic maintenance.
"""

from .config import ConfigError, TrackerConfig, default_config, dump_config, load_config, parse_config
from .engine import Disposition, LineSnap, Tracker, TrackSnapshot
from .events import NEVER, OFF, ON, BoundsError, Event, SurfaceOfActiveEvents, TimeScale
from .filtering import EventFilter, FilterConfig
from .lines import LineConfig, LineState
from .synth import GroundTruth, SceneSpec, TrackSpec, generate, load_scene, score

__version__ = "1.0.0"

__all__ = [
    "NEVER",
    "OFF",
    "ON",
    "BoundsError",
    "ConfigError",
    "Disposition",
    "Event",
    "EventFilter",
    "FilterConfig",
    "GroundTruth",
    "LineConfig",
    "LineSnap",
    "LineState",
    "SceneSpec",
    "SurfaceOfActiveEvents",
    "TimeScale",
    "Tracker",
    "TrackerConfig",
    "TrackSnapshot",
    "TrackSpec",
    "default_config",
    "dump_config",
    "generate",
    "load_config",
    "load_scene",
    "parse_config",
    "score",
]
