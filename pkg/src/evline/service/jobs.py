"""One-shot job implementations shared by the HTTP endpoints and tests.

These are plain functions over the core package; the service layer only
does model validation and error mapping around them.
"""

from __future__ import annotations

import dataclasses
import os
import queue
import threading
import time

from .. import bench as bench_mod
from ..config import TrackerConfig, default_config, load_config
from ..engine import Tracker
from ..fileio import (
    append_snapshot,
    is_binary_event_file,
    iter_event_file,
    load_events_binary,
    open_track_writer,
    read_track_file,
    render_overlay,
    write_event_file,
    write_event_file_binary,
)
from ..synth import generate, load_scene, load_truth, score, write_truth

FEEDER_QUEUE_SIZE = 65536
_SENTINEL = None


def resolve_config(config_path: str | None,
                   hibernation: bool | None = None,
                   polarity_mode: str | None = None) -> TrackerConfig:
    cfg = load_config(config_path) if config_path else default_config()
    overrides = {}
    if hibernation is not None:
        overrides["hibernation_enabled"] = hibernation
    if polarity_mode is not None:
        overrides["polarity_mode"] = polarity_mode
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _event_source(events_path: str):
    """Yields (width, height) first, then (x, y, t, p) rows."""
    if is_binary_event_file(events_path):
        events, width, height = load_events_binary(events_path)
        def gen():
            yield (width, height)
            for row in events.tolist():
                yield row
        return gen()
    return iter_event_file(events_path)


def _feeder(source, q: queue.Queue, err: list) -> None:
    try:
        for item in source:
            q.put(item)          # blocks when full: backpressure, no drops
    except Exception as e:       # surfaced on the consumer side
        err.append(e)
    finally:
        q.put(_SENTINEL)


def run_track(events_path: str, out_path: str, *,
              config: TrackerConfig | None = None,
              snapshot_interval_ms: float = 10.0,
              deterministic: bool = True) -> dict:
    """Track an event file, writing snapshots at a fixed stream-time cadence."""
    cfg = config if config is not None else default_config()
    source = _event_source(events_path)
    header = next(source)
    width, height = header
    if (width, height) != (cfg.width, cfg.height):
        cfg = dataclasses.replace(cfg, width=width, height=height)

    interval_us = int(round(snapshot_interval_ms * 1000))
    if interval_us <= 0:
        raise ValueError("snapshot interval must be positive")

    if deterministic:
        rows = source
    else:
        q: queue.Queue = queue.Queue(FEEDER_QUEUE_SIZE)
        err: list = []
        th = threading.Thread(target=_feeder, args=(source, q, err),
                              name="evline-feeder", daemon=True)
        th.start()

        def drain():
            while True:
                item = q.get()
                if item is _SENTINEL:
                    if err:
                        raise err[0]
                    return
                yield item
        rows = drain()

    n_events = 0
    n_snapshots = 0
    next_snap: int | None = None
    t0 = time.perf_counter()
    with Tracker(cfg, deterministic=deterministic) as tracker, \
            open_track_writer(out_path) as fh:
        process = tracker.process_event
        for row in rows:
            t = row[2]
            if next_snap is None:
                # first snapshot lands on the next interval boundary
                next_snap = (t // interval_us + 1) * interval_us
            while t >= next_snap:
                tracker.run_maintenance(next_snap)
                append_snapshot(fh, tracker.snapshot(next_snap))
                n_snapshots += 1
                next_snap += interval_us
            process(row)
            n_events += 1
        tracker.finish()
        if tracker.stream_time_us is not None:
            append_snapshot(fh, tracker.snapshot(tracker.stream_time_us))
            n_snapshots += 1
        elapsed = time.perf_counter() - t0
        promoted = sum(1 for L in tracker.all_lines() if L.id > 0)
        dispositions = tracker.disposition_counts()
    return {
        "events": n_events,
        "snapshots": n_snapshots,
        "lines_promoted": promoted,
        "dispositions": dispositions,
        "elapsed_s": elapsed,
        "us_per_event": elapsed / n_events * 1e6 if n_events else 0.0,
        "out_path": out_path,
    }


def run_synth(scene_path: str, out_events_path: str, *,
              out_truth_path: str | None = None, seed: int = 0,
              binary: bool = False) -> dict:
    scene = load_scene(scene_path)
    events, truth = generate(scene, seed)
    if binary:
        write_event_file_binary(out_events_path, events, scene.width, scene.height)
    else:
        write_event_file(out_events_path, events, scene.width, scene.height)
    if out_truth_path:
        write_truth(truth, out_truth_path)
    return {
        "n_events": int(len(events)),
        "duration_ms": scene.duration_ms,
        "n_tracks": len(scene.tracks),
        "out_events_path": out_events_path,
        "out_truth_path": out_truth_path,
    }


def run_eval(track_path: str, truth_path: str, *,
             match_dist_px: float = 5.0, match_angle_deg: float = 10.0) -> dict:
    snapshots = read_track_file(track_path)
    truth = load_truth(truth_path)
    return score(snapshots, truth, match_dist_px=match_dist_px,
                 match_angle_deg=match_angle_deg)


def run_bench(*, max_lines: int = 10, max_clusters: int = 12,
              line_duration_ms: float = 900.0,
              cluster_duration_ms: float = 2500.0,
              throughput_ms: float = 4000.0, seed: int = 7) -> dict:
    report = bench_mod.run_bench(
        line_counts=range(1, max_lines + 1),
        cluster_counts=range(1, max_clusters + 1),
        line_duration_ms=line_duration_ms,
        cluster_duration_ms=cluster_duration_ms,
        seed=seed, throughput_ms=throughput_ms)
    report["text"] = bench_mod.format_bench_report(report)
    return report


def run_render(track_path: str, out_dir: str, *, width: int = 346,
               height: int = 260, events_path: str | None = None,
               scale: int = 3) -> dict:
    snapshots = read_track_file(track_path)
    os.makedirs(out_dir, exist_ok=True)
    all_events = None
    if events_path:
        if is_binary_event_file(events_path):
            all_events, _, _ = load_events_binary(events_path)
        else:
            from ..fileio import load_events
            all_events, _, _ = load_events(events_path)
    for i, snap in enumerate(snapshots):
        ev = None
        if all_events is not None:
            # show the last 10 ms of activity behind each frame
            t = snap.timestamp_us
            m = (all_events[:, 2] > t - 10000) & (all_events[:, 2] <= t)
            ev = all_events[m]
        render_overlay(snap, width, height,
                       os.path.join(out_dir, f"frame_{i:05d}.png"),
                       events=ev, scale=scale)
    return {"n_frames": len(snapshots), "out_dir": out_dir}
