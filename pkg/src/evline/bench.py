"""Benchmark scenes and timing harnesses.

Builds steady scenes with a prescribed population of tracked lines and
unpromoted clusters, runs instrumented sweeps over those populations to fit
per-stage cost against entity count, and measures raw two-context throughput.

Scene recipe: bright static 90 px lines (wide enough a band to out-pace the
re-arming refractory and stay above the hibernation density), and dim 14 px
fragments (too few events to promote, frequent enough to survive cleanup).
Ambient noise supplies the chain-growth load: strays landing beside a bright
band pass the support filter but find no unassigned neighbors, so chains
stay short and never reach the cluster-creation count. Bright lines occupy
the upper half of the sensor and fragments the bottom band, so their events
never contend.

The cluster sweep additionally mixes in a checkerboard probe cloud: events
restricted to even-even pixels of a small box. Dense enough to pass the
support filter off each other, yet pairwise non-adjacent under the
8-connected chain walk, the probes can never assemble a creation-sized
chain, so every one of them scans the full cluster list and is rejected.
That traffic dominates the cluster-add stage with a uniform full-scan cost,
which is what makes its per-entity slope resolvable above run-to-run noise.

Each sweep point replays the identical deterministic workload a few times
and keeps the per-stage minimum: contention from the rest of the machine
only ever adds time, so the minimum is the estimate that survives a busy
host.
"""

from __future__ import annotations

import gc
import math
import time

import numpy as np

from .config import TrackerConfig
from .engine import Tracker
from .synth import SceneSpec, TrackSpec, generate

# The refractory stage re-arms on every arrival, so a static band of width w
# passes at most R*exp(-8R/w) ev/(px*ms). Width 2.5 px (jitter 1.25) with
# R = 0.35 sits near that ceiling: ~0.115, comfortably above the 0.08
# hibernation density; spread 2.5/sqrt(12) ~ 0.78 px stays under the 1.2 px
# promotion gate.
BRIGHT_RATE = 0.35
BRIGHT_JITTER = 1.25
# Fragments must hold exactly one cluster each: long enough (14 px) that the
# inferred line is well-conditioned at birth (duplicate clusters born > 15
# deg apart would otherwise coexist), dim enough (~15 events per cleanup
# window, 5 sigma under the 35-event promotion gate) to never promote.
FRAGMENT_RATE = 0.03
FRAGMENT_HALF = 7.0
FRAGMENT_JITTER = 0.3
_MAX_LINES = 10
_MAX_FRAGMENTS = 12


def _line_slots():
    slots = []
    for i in range(_MAX_LINES):
        cx = 62.0 + 74.0 * (i % 4)
        cy = 56.0 + 74.0 * (i // 4)
        ang = math.radians(10.0 + 20.0 * i)
        slots.append((cx, cy, math.cos(ang), math.sin(ang)))
    return slots


def _fragment_slots():
    slots = []
    for j in range(_MAX_FRAGMENTS):
        cx = 42.0 + 50.0 * (j % 6)
        cy = 226.0 + 18.0 * (j // 6)
        ang = math.radians(15.0 + 30.0 * j)
        slots.append((cx, cy, math.cos(ang), math.sin(ang)))
    return slots


def steady_scene(n_lines: int, n_fragments: int, duration_ms: float,
                 *, noise_rate: float = 5.0) -> SceneSpec:
    """A static scene holding n_lines tracked lines and n_fragments clusters.

    The slot layouts keep the two populations spatially separated.
    """
    if n_lines > _MAX_LINES or n_fragments > _MAX_FRAGMENTS:
        raise ValueError("population exceeds the slot layout")
    tracks = []
    for cx, cy, dx, dy in _line_slots()[:n_lines]:
        tracks.append(TrackSpec(cx - 45 * dx, cy - 45 * dy,
                                cx + 45 * dx, cy + 45 * dy,
                                rate=BRIGHT_RATE, jitter_px=BRIGHT_JITTER))
    h = FRAGMENT_HALF
    for cx, cy, dx, dy in _fragment_slots()[:n_fragments]:
        # single polarity: clusters are polarity-segregated, and a random-
        # polarity fragment would hold one cluster per polarity
        tracks.append(TrackSpec(cx - h * dx, cy - h * dy,
                                cx + h * dx, cy + h * dy,
                                rate=FRAGMENT_RATE, jitter_px=FRAGMENT_JITTER,
                                polarity="on"))
    return SceneSpec(duration_ms=duration_ms, noise_rate_per_ms=noise_rate,
                     tracks=tracks)


# Probe cloud: 16x16 even-coordinate cells in a box well away from the
# fragment band. Per-cell rate 0.047/ms saturates the 70 ms support window
# (the ~30% lost to the 8 ms refractory are spares), and a chain seeded at
# an odd-coordinate stray inside the box reaches at most 5 pixels -- still
# under the creation count.
PROBE_BOX = (60, 60, 90, 90)
PROBE_RATE = 12.0


def probe_cloud(duration_ms: float, *, seed: int = 1234,
                box=PROBE_BOX, rate_per_ms: float = PROBE_RATE) -> np.ndarray:
    """Even-pixel probe events: filter-passing, cluster-rejecting, chain-inert."""
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate_per_ms * duration_ms)
    x0, y0, x1, y1 = box
    xs = rng.integers(x0 // 2, x1 // 2 + 1, n) * 2
    ys = rng.integers(y0 // 2, y1 // 2 + 1, n) * 2
    ts = rng.integers(0, int(duration_ms * 1000), n)
    pol = np.ones(n, dtype=np.int64)
    ev = np.stack([xs, ys, ts, pol], axis=1).astype(np.int64)
    return ev[np.argsort(ev[:, 2], kind="stable")]


def _feed(tracker: Tracker, rows) -> None:
    process = tracker.process_event
    for row in rows:
        process(row)


def run_instrumented(scene: SceneSpec, *, seed: int = 7,
                     warmup_ms: float = 350.0,
                     config: TrackerConfig | None = None,
                     extra_events: np.ndarray | None = None) -> dict:
    """Deterministic instrumented run; timing rows exclude the warm-up."""
    events, _ = generate(scene, seed)
    if extra_events is not None and len(extra_events):
        events = np.concatenate([events, extra_events])
        events = events[np.argsort(events[:, 2], kind="stable")]
    rows = events.tolist()
    split_t = int(warmup_ms * 1000)
    cut = 0
    for cut, row in enumerate(rows):
        if row[2] >= split_t:
            break
    tracker = Tracker(config, deterministic=True, instrumented=True)
    _feed(tracker, rows[:cut])
    tracker.instrument_reset()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        _feed(tracker, rows[cut:])
    finally:
        if was_enabled:
            gc.enable()
    stats = tracker.instrument()
    stats["n_lines_final"] = len(tracker.lines)
    stats["n_clusters_final"] = len(tracker.clusters)
    stats["events"] = len(rows)
    return stats


def _dominant_row(stats: dict) -> dict:
    return max(stats["rows"], key=lambda r: r["events"])


def _min_of_repeats(run_once, repeats: int, ns_keys) -> dict:
    # identical deterministic workload each time; scheduler interference only
    # ever inflates a timing, so the per-stage minimum is the clean estimate
    best = run_once()
    for _ in range(repeats - 1):
        row = run_once()
        for k in ns_keys:
            best[k] = min(best[k], row[k])
    return best


def sweep_lines(counts=range(1, 11), *, duration_ms: float = 900.0,
                seed: int = 7, repeats: int = 3) -> list[dict]:
    """Per-stage steady-state cost at each line population."""
    out = []
    for n in counts:
        scene = steady_scene(n, 0, duration_ms)

        def once():
            return _dominant_row(run_instrumented(scene, seed=seed))

        row = _min_of_repeats(once, repeats, ("line_add_ns", "filter_ns"))
        out.append({"requested_lines": n,
                    "n_lines": row["n_lines"],
                    "n_clusters": row["n_clusters"],
                    "line_add_ns": row["line_add_ns"],
                    "filter_ns": row["filter_ns"],
                    "events": row["events"]})
    return out


def sweep_clusters(counts=range(1, 13), *, duration_ms: float = 2500.0,
                   seed: int = 7, repeats: int = 3) -> list[dict]:
    """Per-stage steady-state cost at each cluster population."""
    # every population point gets the identical probe cloud, so the traffic
    # mix hitting the cluster-add stage differs only in the list being scanned
    probes = probe_cloud(duration_ms)
    out = []
    for n in counts:
        # no ambient noise here: chain growth walks the raw timestamp
        # surface, so strays near a fragment band take longer walks than
        # strays in the open -- and band count is the swept variable.  With
        # the noise gone, chain invocations come from the probe cloud alone
        # (identical at every point) and the fit isolates list-scan scaling
        # from that scene artifact.
        scene = steady_scene(0, n, duration_ms, noise_rate=0.0)

        def once():
            return _dominant_row(run_instrumented(scene, seed=seed,
                                                  extra_events=probes))

        row = _min_of_repeats(once, repeats,
                              ("cluster_add_ns", "chain_ns", "filter_ns"))
        out.append({"requested_clusters": n,
                    "n_lines": row["n_lines"],
                    "n_clusters": row["n_clusters"],
                    "cluster_add_ns": row["cluster_add_ns"],
                    "chain_ns": row["chain_ns"],
                    "filter_ns": row["filter_ns"],
                    "events": row["events"]})
    return out


def linear_fit(xs, ys) -> dict:
    """Least squares y = a*x + b with R^2 and the slope's standard error."""
    n = len(xs)
    if n < 3:
        raise ValueError("need >= 3 points")
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    if sxx <= 0:
        raise ValueError("degenerate x range")
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    slope = sxy / sxx
    intercept = my - slope * mx
    ss_res = sum((y - (slope * x + intercept)) ** 2 for x, y in zip(xs, ys))
    ss_tot = sum((y - my) ** 2 for y in ys)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    stderr = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else 0.0
    return {"slope": slope, "intercept": intercept, "r2": r2,
            "slope_stderr": stderr}


def throughput(*, duration_ms: float = 4000.0, seed: int = 11,
               warmup_ms: float = 500.0,
               config: TrackerConfig | None = None) -> dict:
    """Two-context wall-clock throughput on the 3-line / 4-cluster scene."""
    scene = steady_scene(3, 4, duration_ms)
    events, _ = generate(scene, seed)
    rows = events.tolist()
    split_t = int(warmup_ms * 1000)
    cut = 0
    for cut, row in enumerate(rows):
        if row[2] >= split_t:
            break
    with Tracker(config, deterministic=False) as tracker:
        _feed(tracker, rows[:cut])
        timed = rows[cut:]
        # slice the timed stream so the live population can be sampled
        # without touching the per-event loop; maintenance runs on its own
        # thread here, so the population at any single instant is racy and
        # only the modal count over the run is meaningful
        step = max(1, len(timed) // 20)
        pops = []
        gc_was_enabled = gc.isenabled()
        gc.disable()
        try:
            t0 = time.perf_counter()
            for i in range(0, len(timed), step):
                _feed(tracker, timed[i:i + step])
                pops.append((len(tracker.lines), len(tracker.clusters)))
            elapsed = time.perf_counter() - t0
        finally:
            if gc_was_enabled:
                gc.enable()
        n_lines = len(tracker.lines)
        n_clusters = len(tracker.clusters)
    n = len(timed)
    modal = max(set(pops), key=pops.count) if pops else (0, 0)
    return {"events_timed": n,
            "elapsed_s": elapsed,
            "us_per_event": elapsed / n * 1e6 if n else 0.0,
            "events_per_s": n / elapsed if elapsed > 0 else 0.0,
            "n_lines_modal": modal[0],
            "n_clusters_modal": modal[1],
            "n_lines_final": n_lines,
            "n_clusters_final": n_clusters}


def run_bench(*, line_counts=range(1, 11), cluster_counts=range(1, 13),
              line_duration_ms: float = 900.0,
              cluster_duration_ms: float = 2500.0, seed: int = 7,
              throughput_ms: float = 4000.0, repeats: int = 3) -> dict:
    """Full benchmark: sweeps, linear fits, and the throughput figure.

    The cluster sweep defaults to a longer dwell: its per-point means
    need more samples before the scan slope clears the timing noise.
    """
    lines = sweep_lines(line_counts, duration_ms=line_duration_ms, seed=seed,
                        repeats=repeats)
    clusters = sweep_clusters(cluster_counts, duration_ms=cluster_duration_ms,
                              seed=seed, repeats=repeats)
    fits = {
        "line_add_vs_lines": linear_fit(
            [r["n_lines"] for r in lines], [r["line_add_ns"] for r in lines]),
        "filter_vs_lines": linear_fit(
            [r["n_lines"] for r in lines], [r["filter_ns"] for r in lines]),
        "cluster_add_vs_clusters": linear_fit(
            [r["n_clusters"] for r in clusters],
            [r["cluster_add_ns"] for r in clusters]),
        "chain_vs_clusters": linear_fit(
            [r["n_clusters"] for r in clusters],
            [r["chain_ns"] for r in clusters]),
    }
    return {"line_sweep": lines, "cluster_sweep": clusters, "fits": fits,
            "throughput": throughput(duration_ms=throughput_ms, seed=seed)}


def format_bench_report(report: dict) -> str:
    out = ["per-stage cost vs line count (steady scenes):",
           "  lines  clusters  line_add_ns  filter_ns  events"]
    for r in report["line_sweep"]:
        out.append(f"  {r['n_lines']:5d}  {r['n_clusters']:8d}  "
                   f"{r['line_add_ns']:11.0f}  {r['filter_ns']:9.0f}  "
                   f"{r['events']:6d}")
    out.append("per-stage cost vs cluster count:")
    out.append("  lines  clusters  cluster_add_ns  chain_ns  events")
    for r in report["cluster_sweep"]:
        out.append(f"  {r['n_lines']:5d}  {r['n_clusters']:8d}  "
                   f"{r['cluster_add_ns']:14.0f}  {r['chain_ns']:8.0f}  "
                   f"{r['events']:6d}")
    out.append("linear fits (ns per event vs population):")
    for name, fit in report["fits"].items():
        out.append(f"  {name}: slope={fit['slope']:.1f} ns/entity "
                   f"(stderr {fit['slope_stderr']:.1f}), "
                   f"intercept={fit['intercept']:.0f} ns, r2={fit['r2']:.3f}")
    tp = report["throughput"]
    out.append(f"throughput (two-context, 3 lines / 4 clusters): "
               f"{tp['us_per_event']:.2f} us/event, "
               f"{tp['events_per_s']:,.0f} events/s over {tp['events_timed']} events")
    return "\n".join(out) + "\n"
