"""Tracker configuration: composed sections plus a flat key = value file format.

Keys carry their unit as a suffix (`_ms`, `_px`, `_deg`); durations are
converted to integer microseconds internally. `dump_config(default_config())`
is the canonical reference of every tunable and its default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .clustering import ClusterConfig
from .events import TimeScale
from .filtering import FilterConfig
from .lines import LineConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrackerConfig:
    width: int = 346
    height: int = 260
    time_scale: TimeScale = field(default_factory=TimeScale)
    filter: FilterConfig = field(default_factory=FilterConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    line: LineConfig = field(default_factory=LineConfig)
    maintenance_interval_us: int = 10_000
    hibernation_enabled: bool = True
    polarity_mode: str = "split"            # or "merged"
    promote_in_maintenance: bool = False

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("sensor dimensions must be positive")
        if self.maintenance_interval_us <= 0:
            raise ConfigError("maintenance interval must be positive")
        if self.maintenance_interval_us > self.cluster.deletion_no_events_us:
            raise ConfigError(
                "maintenance interval must not exceed the smallest age "
                "threshold it enforces (cluster deletion_no_events)")
        if self.polarity_mode not in ("split", "merged"):
            raise ConfigError(f"unknown polarity_mode {self.polarity_mode!r}")


# key -> (section name or "", attribute, kind); kind "ms" maps a float of
# milliseconds onto an integer-microsecond attribute (suffix _us)
_KEYS = (
    ("sensor.width_px", "", "width", "int"),
    ("sensor.height_px", "", "height", "int"),
    ("time.pixels_per_millisecond", "time_scale", "pixels_per_millisecond", "float"),
    ("filter.refractory_same_polarity_ms", "filter", "refractory_same_us", "ms"),
    ("filter.refractory_opposite_polarity_ms", "filter", "refractory_opposite_us", "ms"),
    ("filter.neighborhood_half_extent_px", "filter", "neighborhood_half_extent", "int"),
    ("filter.neighborhood_max_age_ms", "filter", "neighborhood_age_us", "ms"),
    ("filter.neighborhood_min_support", "filter", "neighborhood_min_support", "int"),
    ("filter.update_sae_on_suppressed", "filter", "update_sae_on_suppressed", "bool"),
    ("cluster.creation_num_events", "cluster", "creation_num_events", "int"),
    ("cluster.addition_threshold_px", "cluster", "addition_threshold_px", "float"),
    ("cluster.merge_angle_deg", "cluster", "merge_angle_deg", "float"),
    ("cluster.cleanup_event_age_ms", "cluster", "cleanup_event_age_us", "ms"),
    ("cluster.deletion_no_events_ms", "cluster", "deletion_no_events_us", "ms"),
    ("cluster.min_events_after_cleanup", "cluster", "min_events_after_cleanup", "int"),
    ("cluster.midpoint_min_extent_px", "cluster", "midpoint_min_extent_px", "float"),
    ("cluster.chain_seed_max_age_ms", "cluster", "chain_seed_max_age_us", "ms"),
    ("cluster.chain_max_length", "cluster", "chain_max_length", "int"),
    ("cluster.promotion_num_events", "cluster", "promotion_num_events", "int"),
    ("line.promotion_threshold_px", "line", "promotion_threshold_px", "float"),
    ("line.promotion_num_events", "line", "promotion_num_events", "int"),
    ("line.init_length_px", "line", "init_length_px", "float"),
    ("line.init_period_ms", "line", "init_period_us", "ms"),
    ("line.addition_threshold_px", "line", "addition_threshold_px", "float"),
    ("line.addition_b_mode", "line", "addition_b_mode", "str"),
    ("line.merge_angle_deg", "line", "merge_angle_deg", "float"),
    ("line.merge_distance_px", "line", "merge_distance_px", "float"),
    ("line.hibernation_density", "line", "hibernation_density", "float"),
    ("line.density_window_ms", "line", "density_window_us", "ms"),
    ("line.cleanup_event_age_ms", "line", "cleanup_event_age_us", "ms"),
    ("line.deletion_no_events_ms", "line", "deletion_no_events_us", "ms"),
    ("line.hibernation_timeout_ms", "line", "hibernation_timeout_us", "ms"),
    ("line.min_active_length_px", "line", "min_active_length_px", "float"),
    ("line.wake_mode", "line", "wake_mode", "str"),
    ("line.hibernation_hysteresis", "line", "hibernation_hysteresis", "float"),
    ("line.length_mode", "line", "length_mode", "str"),
    ("engine.maintenance_interval_ms", "", "maintenance_interval_us", "ms"),
    ("engine.hibernation_enabled", "", "hibernation_enabled", "bool"),
    ("engine.polarity_mode", "", "polarity_mode", "str"),
    ("engine.promote_in_maintenance", "", "promote_in_maintenance", "bool"),
)

_KEY_MAP = {k: (sec, attr, kind) for k, sec, attr, kind in _KEYS}


def default_config() -> TrackerConfig:
    return TrackerConfig()


def _parse_value(key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "ms":
            return round(float(raw) * 1000.0)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str) -> TrackerConfig:
    """Build a TrackerConfig from flat `key = value` text.

    Unknown keys and malformed lines are hard errors, reported with their
    line number. Missing keys keep their defaults.
    """
    overrides: dict[str, dict] = {"": {}, "time_scale": {}, "filter": {},
                                  "cluster": {}, "line": {}}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _KEY_MAP:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, attr, kind = _KEY_MAP[key]
        overrides[section][attr] = _parse_value(key, kind, raw)

    try:
        cfg = TrackerConfig(
            time_scale=TimeScale(**overrides["time_scale"]),
            filter=FilterConfig(**overrides["filter"]),
            cluster=ClusterConfig(**overrides["cluster"]),
            line=LineConfig(**overrides["line"]),
            **overrides[""],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _format_value(value, kind: str) -> str:
    if kind == "ms":
        return repr(value / 1000.0)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


def dump_config(cfg: TrackerConfig) -> str:
    """Serialize every key in canonical order; inverse of parse_config."""
    out = []
    for key, section, attr, kind in _KEYS:
        obj = cfg if section == "" else getattr(cfg, section)
        out.append(f"{key} = {_format_value(getattr(obj, attr), kind)}")
    return "\n".join(out) + "\n"


def load_config(path) -> TrackerConfig:
    with open(path, "r", encoding="ascii") as fh:
        return parse_config(fh.read())
