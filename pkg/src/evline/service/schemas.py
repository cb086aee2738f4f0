"""Request/response models for the tracking service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class SessionCreateRequest(BaseModel):
    config_text: str | None = None
    deterministic: bool = True
    hibernation: bool | None = None      # None -> config value
    polarity_mode: str | None = None     # None -> config value


class SessionInfo(BaseModel):
    session_id: str
    deterministic: bool
    width: int
    height: int


class EventBatch(BaseModel):
    """Events as [x, y, t_us, polarity] rows, ascending t."""

    events: list[list[int]]


class BatchResult(BaseModel):
    accepted: int
    dispositions: dict[str, int]
    stream_time_us: int | None


class LineSnapModel(BaseModel):
    line_id: int
    state: str
    mid_x: float
    mid_y: float
    angle_deg: float
    length_px: float
    n_events: int


class SnapshotModel(BaseModel):
    timestamp_us: int
    lines: list[LineSnapModel]


class SessionStats(BaseModel):
    events_processed: int
    stream_time_us: int | None
    dispositions: dict[str, int]
    n_lines: int
    n_clusters: int


class TrackJobRequest(BaseModel):
    events_path: str
    out_path: str
    config_path: str | None = None
    snapshot_interval_ms: float = Field(10.0, gt=0)
    deterministic: bool = True
    hibernation: bool | None = None
    polarity_mode: str | None = None


class TrackJobResult(BaseModel):
    events: int
    snapshots: int
    lines_promoted: int
    dispositions: dict[str, int]
    elapsed_s: float
    us_per_event: float
    out_path: str


class SynthJobRequest(BaseModel):
    scene_path: str
    out_events_path: str
    out_truth_path: str | None = None
    seed: int = 0
    binary: bool = False


class SynthJobResult(BaseModel):
    n_events: int
    duration_ms: float
    n_tracks: int
    out_events_path: str
    out_truth_path: str | None


class EvalJobRequest(BaseModel):
    track_path: str
    truth_path: str
    match_dist_px: float = 5.0
    match_angle_deg: float = 10.0


class EvalJobResult(BaseModel):
    tracked_lines: int
    matched_lines: int
    false_lines: int
    mean_lifetime_s: float
    total_id_switches: int
    per_track_id_switches: dict[int, int]
    midpoint_rms_px: float
    direction_rms_deg: float
    n_tracks: int


class BenchJobRequest(BaseModel):
    max_lines: int = Field(10, ge=3, le=10)
    max_clusters: int = Field(12, ge=3, le=12)
    line_duration_ms: float = Field(900.0, gt=0)
    cluster_duration_ms: float = Field(2500.0, gt=0)
    throughput_ms: float = Field(4000.0, gt=0)
    seed: int = 7


class LinearFitModel(BaseModel):
    slope: float
    intercept: float
    r2: float
    slope_stderr: float


class BenchJobResult(BaseModel):
    fits: dict[str, LinearFitModel]
    us_per_event: float
    events_per_s: float
    text: str


class RenderJobRequest(BaseModel):
    track_path: str
    out_dir: str
    width: int = 346
    height: int = 260
    events_path: str | None = None
    scale: int = Field(3, ge=1, le=8)


class RenderJobResult(BaseModel):
    n_frames: int
    out_dir: str


class ErrorBody(BaseModel):
    detail: str
