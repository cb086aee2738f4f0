"""FastAPI application: streaming sessions plus one-shot file jobs.

Sessions hold a live tracker fed by event batches; jobs wrap the offline
pipelines (track / synth / eval / bench / render) for thin clients. Input
problems map to 400, internal failures to 500.
"""

from __future__ import annotations

import threading
import uuid

from fastapi import FastAPI, HTTPException

from ..config import ConfigError, default_config, dump_config, parse_config
from ..engine import Tracker
from ..fileio import EventFileError
from . import jobs
from .schemas import (
    BatchResult,
    BenchJobRequest,
    BenchJobResult,
    EvalJobRequest,
    EvalJobResult,
    EventBatch,
    LineSnapModel,
    RenderJobRequest,
    RenderJobResult,
    SessionCreateRequest,
    SessionInfo,
    SessionStats,
    SnapshotModel,
    SynthJobRequest,
    SynthJobResult,
    TrackJobRequest,
    TrackJobResult,
)

_CLIENT_ERRORS = (ConfigError, EventFileError, FileNotFoundError, ValueError)


class _Session:
    def __init__(self, tracker: Tracker, deterministic: bool):
        self.tracker = tracker
        self.deterministic = deterministic
        self.feed_lock = threading.Lock()   # serialize concurrent batches


def _snapshot_model(snap) -> SnapshotModel:
    return SnapshotModel(
        timestamp_us=snap.timestamp_us,
        lines=[LineSnapModel(**s._asdict()) for s in snap.lines])


def create_app() -> FastAPI:
    app = FastAPI(title="evline", version="1.0.0",
                  description="Streaming line tracking for event cameras")
    sessions: dict[str, _Session] = {}
    sessions_lock = threading.Lock()

    def get_session(sid: str) -> _Session:
        with sessions_lock:
            s = sessions.get(sid)
        if s is None:
            raise HTTPException(404, f"no such session: {sid}")
        return s

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/config/default")
    def config_default():
        return {"text": dump_config(default_config())}

    @app.post("/sessions", response_model=SessionInfo)
    def create_session(req: SessionCreateRequest):
        try:
            cfg = parse_config(req.config_text) if req.config_text else default_config()
            overrides = {}
            if req.hibernation is not None:
                overrides["hibernation_enabled"] = req.hibernation
            if req.polarity_mode is not None:
                overrides["polarity_mode"] = req.polarity_mode
            if overrides:
                import dataclasses
                cfg = dataclasses.replace(cfg, **overrides)
            tracker = Tracker(cfg, deterministic=req.deterministic)
        except _CLIENT_ERRORS as e:
            raise HTTPException(400, str(e))
        sid = uuid.uuid4().hex[:12]
        with sessions_lock:
            sessions[sid] = _Session(tracker, req.deterministic)
        return SessionInfo(session_id=sid, deterministic=req.deterministic,
                           width=cfg.width, height=cfg.height)

    @app.post("/sessions/{sid}/events", response_model=BatchResult)
    def feed_events(sid: str, batch: EventBatch):
        s = get_session(sid)
        tracker = s.tracker
        with s.feed_lock:
            for row in batch.events:
                if len(row) != 4:
                    raise HTTPException(400, "event rows must be [x, y, t_us, p]")
                tracker.process_event(row)
        return BatchResult(accepted=len(batch.events),
                           dispositions=tracker.disposition_counts(),
                           stream_time_us=tracker.stream_time_us)

    @app.get("/sessions/{sid}/snapshot", response_model=SnapshotModel)
    def session_snapshot(sid: str):
        s = get_session(sid)
        return _snapshot_model(s.tracker.snapshot())

    @app.get("/sessions/{sid}/stats", response_model=SessionStats)
    def session_stats(sid: str):
        tracker = get_session(sid).tracker
        return SessionStats(events_processed=tracker.events_processed,
                            stream_time_us=tracker.stream_time_us,
                            dispositions=tracker.disposition_counts(),
                            n_lines=len(tracker.lines),
                            n_clusters=len(tracker.clusters))

    @app.post("/sessions/{sid}/maintenance", response_model=SnapshotModel)
    def session_maintenance(sid: str):
        s = get_session(sid)
        tracker = s.tracker
        with s.feed_lock:
            tracker.finish()
            return _snapshot_model(tracker.snapshot())

    @app.delete("/sessions/{sid}")
    def close_session(sid: str):
        with sessions_lock:
            s = sessions.pop(sid, None)
        if s is None:
            raise HTTPException(404, f"no such session: {sid}")
        s.tracker.close()
        return {"closed": sid}

    @app.post("/jobs/track", response_model=TrackJobResult)
    def job_track(req: TrackJobRequest):
        try:
            cfg = jobs.resolve_config(req.config_path, req.hibernation,
                                      req.polarity_mode)
            out = jobs.run_track(req.events_path, req.out_path, config=cfg,
                                 snapshot_interval_ms=req.snapshot_interval_ms,
                                 deterministic=req.deterministic)
        except _CLIENT_ERRORS as e:
            raise HTTPException(400, str(e))
        return TrackJobResult(**out)

    @app.post("/jobs/synth", response_model=SynthJobResult)
    def job_synth(req: SynthJobRequest):
        try:
            out = jobs.run_synth(req.scene_path, req.out_events_path,
                                 out_truth_path=req.out_truth_path,
                                 seed=req.seed, binary=req.binary)
        except _CLIENT_ERRORS as e:
            raise HTTPException(400, str(e))
        return SynthJobResult(**out)

    @app.post("/jobs/eval", response_model=EvalJobResult)
    def job_eval(req: EvalJobRequest):
        try:
            out = jobs.run_eval(req.track_path, req.truth_path,
                                match_dist_px=req.match_dist_px,
                                match_angle_deg=req.match_angle_deg)
        except _CLIENT_ERRORS as e:
            raise HTTPException(400, str(e))
        return EvalJobResult(**{k: out[k] for k in EvalJobResult.model_fields})

    @app.post("/jobs/bench", response_model=BenchJobResult)
    def job_bench(req: BenchJobRequest):
        out = jobs.run_bench(max_lines=req.max_lines,
                             max_clusters=req.max_clusters,
                             line_duration_ms=req.line_duration_ms,
                             cluster_duration_ms=req.cluster_duration_ms,
                             throughput_ms=req.throughput_ms, seed=req.seed)
        tp = out["throughput"]
        return BenchJobResult(fits=out["fits"],
                              us_per_event=tp["us_per_event"],
                              events_per_s=tp["events_per_s"],
                              text=out["text"])

    @app.post("/jobs/render", response_model=RenderJobResult)
    def job_render(req: RenderJobRequest):
        try:
            out = jobs.run_render(req.track_path, req.out_dir,
                                  width=req.width, height=req.height,
                                  events_path=req.events_path,
                                  scale=req.scale)
        except _CLIENT_ERRORS as e:
            raise HTTPException(400, str(e))
        return RenderJobResult(**out)

    return app
