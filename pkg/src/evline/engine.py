"""The streaming tracker: per-event cascade plus periodic maintenance.

Every event runs the same cascade: noise filtering, then membership tests
against lines, then clusters, then an attempt to start a new cluster by chain
growth from the unassigned surfaces. Maintenance (cleanup, refits, state
transitions, merges) runs every maintenance_interval of *stream* time —
either interleaved with ingest at timestamp boundaries (deterministic mode)
or from a separate thread that follows the stream clock (two-context mode).

Concurrency contract: exactly one ingest context and one maintenance
context. They synchronize per entity (each line/cluster has a lock; geometry
is read as immutable tuples swapped whole); registry edits take a registry
lock. Scans iterate the live lists without locking, so in two-context mode an
event may rarely miss an entity mid-edit — it then falls through to a later
cascade stage, which is benign and disappears in deterministic mode.
"""

from __future__ import annotations

import enum
import math
import threading
import time
from dataclasses import dataclass
from typing import NamedTuple

from .clustering import (
    Cluster,
    ClusterAddResult,
    cluster_maintenance,
    grow_chain,
    try_add_to_cluster,
    try_create_cluster,
)
from .config import TrackerConfig
from .events import BoundsError, SurfaceOfActiveEvents
from .filtering import EventFilter
from .lines import (
    Line,
    LineAddResult,
    LineState,
    line_maintenance,
    try_add_to_line,
    try_promote,
)


class Disposition(enum.Enum):
    SUPPRESSED = "suppressed"
    LINE = "line"
    AMBIGUOUS = "ambiguous"
    CLUSTER = "cluster"
    NEW_CLUSTER = "new_cluster"
    UNASSIGNED = "unassigned"
    OUT_OF_BOUNDS = "out_of_bounds"


class LineSnap(NamedTuple):
    line_id: int
    state: str
    mid_x: float
    mid_y: float
    angle_deg: float
    length_px: float
    n_events: int


@dataclass
class TrackSnapshot:
    timestamp_us: int
    lines: list[LineSnap]


_REPORT_KEYS = ("clusters_deleted", "cluster_events_removed",
                "lines_activated", "lines_deleted", "lines_hibernated",
                "lines_woken", "lines_merged", "line_events_removed",
                "promoted")


class Tracker:
    """Streaming line tracker over an event stream.

    deterministic=True interleaves maintenance with ingest at stream-time
    boundaries (bit-reproducible); deterministic=False runs maintenance in a
    background thread driven by the stream clock (the throughput
    configuration). Use as a context manager or call close() in the
    two-context mode.
    """

    def __init__(self, config: TrackerConfig | None = None, *,
                 deterministic: bool = True, instrumented: bool = False):
        self.cfg = config if config is not None else TrackerConfig()
        cfg = self.cfg
        self.filter = EventFilter(cfg.width, cfg.height, cfg.filter)
        self.sae_unassigned = (
            SurfaceOfActiveEvents(cfg.width, cfg.height),
            SurfaceOfActiveEvents(cfg.width, cfg.height),
        )
        self.lines: list[Line] = []
        self.clusters: list[Cluster] = []
        self.dead_lines: list[Line] = []
        self.deterministic = deterministic
        self.stream_time_us: int | None = None
        self.events_processed = 0
        self.counts = {d: 0 for d in Disposition}
        self._scale_per_us = cfg.time_scale.per_us
        self._merged_polarity = cfg.polarity_mode == "merged"
        self._next_line_id = 1
        self._next_line_order = 1
        self._next_cluster_order = 1
        self._next_maintenance_us: int | None = None
        self._last_maintenance_us: int | None = None
        self._reg_lock = threading.Lock()
        self._maint_lock = threading.Lock()
        self._instr = None
        if instrumented:
            self._instr = {"samples": {}}
        self._stop_evt = threading.Event()
        self._maint_thread = None
        if not deterministic:
            self._maint_thread = threading.Thread(
                target=self._maintenance_loop, name="evline-maintenance",
                daemon=True)
            self._maint_thread.start()

    # -- lifecycle ---------------------------------------------------------

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._maint_thread is not None:
            self._stop_evt.set()
            self._maint_thread.join()
            self._maint_thread = None

    def finish(self):
        """Run a final maintenance pass at the last seen stream time."""
        if self.stream_time_us is not None:
            self.run_maintenance(self.stream_time_us)

    def _alloc_id(self) -> int:
        i = self._next_line_id
        self._next_line_id = i + 1
        return i

    # -- ingest ------------------------------------------------------------

    def process_event(self, e):
        """Run one event through the cascade; returns (Disposition, line id or None)."""
        x, y, t, p = e
        if self._merged_polarity:
            p = 1
        if self.deterministic:
            nm = self._next_maintenance_us
            if nm is None:
                interval = self.cfg.maintenance_interval_us
                self._next_maintenance_us = (t // interval + 1) * interval
            elif t >= nm:
                interval = self.cfg.maintenance_interval_us
                while t >= nm:
                    self.run_maintenance(nm)
                    nm += interval
                self._next_maintenance_us = nm
        self.stream_time_us = t
        self.events_processed += 1
        instr = self._instr
        if instr is None:
            return self._cascade(x, y, t, p)
        return self._cascade_instrumented(x, y, t, p)

    def _cascade(self, x, y, t, p):
        try:
            passed = self.filter.process(x, y, t, p)
        except BoundsError:
            self.counts[Disposition.OUT_OF_BOUNDS] += 1
            return (Disposition.OUT_OF_BOUNDS, None)
        if not passed:
            self.counts[Disposition.SUPPRESSED] += 1
            return (Disposition.SUPPRESSED, None)

        res, line = try_add_to_line(x, y, t, t * self._scale_per_us,
                                    self.lines, self.cfg.line)
        if res is LineAddResult.ADDED:
            self.counts[Disposition.LINE] += 1
            return (Disposition.LINE, line.display_id)
        if res is LineAddResult.AMBIGUOUS:
            self.counts[Disposition.AMBIGUOUS] += 1
            return (Disposition.AMBIGUOUS, None)

        cres, cluster, absorbed = try_add_to_cluster(
            x, y, t, p, self.clusters, self.cfg.cluster)
        if cres is not ClusterAddResult.REJECTED:
            if absorbed:
                with self._reg_lock:
                    for c in absorbed:
                        if c in self.clusters:
                            self.clusters.remove(c)
            if (cluster.acc.n >= self.cfg.cluster.promotion_num_events
                    and not self.cfg.promote_in_maintenance):
                self._promote(cluster, t)
            self.counts[Disposition.CLUSTER] += 1
            return (Disposition.CLUSTER, None)

        sae_u = self.sae_unassigned[p]
        sae_u.update(x, y, t)
        chain = grow_chain(sae_u, x, y, t, self.cfg.cluster)
        if len(chain) >= self.cfg.cluster.creation_num_events:
            c = try_create_cluster(chain, p, t, self._next_cluster_order,
                                   self._scale_per_us, self.cfg.cluster)
            self._next_cluster_order += 1
            with self._reg_lock:
                self.clusters.append(c)
            self.counts[Disposition.NEW_CLUSTER] += 1
            return (Disposition.NEW_CLUSTER, None)
        self.counts[Disposition.UNASSIGNED] += 1
        return (Disposition.UNASSIGNED, None)

    def _cascade_instrumented(self, x, y, t, p):
        # same cascade with per-stage wall-clock accounting; kept separate so
        # the untimed path stays branch-free
        pcns = time.perf_counter_ns
        key = (len(self.lines), len(self.clusters))
        instr = self._instr
        row = instr["samples"].get(key)
        if row is None:
            # [events, filter_ns, n, line_ns, n, cluster_ns, n, chain_ns, n]
            row = instr["samples"][key] = [0] * 9
        row[0] += 1

        t0 = pcns()
        try:
            passed = self.filter.process(x, y, t, p)
        except BoundsError:
            self.counts[Disposition.OUT_OF_BOUNDS] += 1
            return (Disposition.OUT_OF_BOUNDS, None)
        t1 = pcns()
        row[1] += t1 - t0
        row[2] += 1
        if not passed:
            self.counts[Disposition.SUPPRESSED] += 1
            return (Disposition.SUPPRESSED, None)

        res, line = try_add_to_line(x, y, t, t * self._scale_per_us,
                                    self.lines, self.cfg.line)
        t2 = pcns()
        row[3] += t2 - t1
        row[4] += 1
        if res is LineAddResult.ADDED:
            self.counts[Disposition.LINE] += 1
            return (Disposition.LINE, line.display_id)
        if res is LineAddResult.AMBIGUOUS:
            self.counts[Disposition.AMBIGUOUS] += 1
            return (Disposition.AMBIGUOUS, None)

        cres, cluster, absorbed = try_add_to_cluster(
            x, y, t, p, self.clusters, self.cfg.cluster)
        t3 = pcns()
        row[5] += t3 - t2
        row[6] += 1
        if cres is not ClusterAddResult.REJECTED:
            if absorbed:
                with self._reg_lock:
                    for c in absorbed:
                        if c in self.clusters:
                            self.clusters.remove(c)
            if (cluster.acc.n >= self.cfg.cluster.promotion_num_events
                    and not self.cfg.promote_in_maintenance):
                self._promote(cluster, t)
            self.counts[Disposition.CLUSTER] += 1
            return (Disposition.CLUSTER, None)

        sae_u = self.sae_unassigned[p]
        sae_u.update(x, y, t)
        chain = grow_chain(sae_u, x, y, t, self.cfg.cluster)
        disp = Disposition.UNASSIGNED
        if len(chain) >= self.cfg.cluster.creation_num_events:
            c = try_create_cluster(chain, p, t, self._next_cluster_order,
                                   self._scale_per_us, self.cfg.cluster)
            self._next_cluster_order += 1
            with self._reg_lock:
                self.clusters.append(c)
            disp = Disposition.NEW_CLUSTER
        t4 = pcns()
        row[7] += t4 - t3
        row[8] += 1
        self.counts[disp] += 1
        return (disp, None)

    def _promote(self, cluster: Cluster, t_now: int) -> bool:
        line = try_promote(cluster, t_now, self._next_line_order, self.cfg.line)
        if line is None:
            return False
        self._next_line_order += 1
        with self._reg_lock:
            if cluster in self.clusters:
                self.clusters.remove(cluster)
            self.lines.append(line)
        return True

    # -- maintenance -------------------------------------------------------

    def run_maintenance(self, t_now_us: int) -> dict:
        """One maintenance pass at stream time t_now_us. Idempotent per t_now."""
        with self._maint_lock:
            report = dict.fromkeys(_REPORT_KEYS, 0)
            with self._reg_lock:
                cluster_snapshot = list(self.clusters)
            survivors, deleted, removed = cluster_maintenance(
                cluster_snapshot, t_now_us, self.cfg.cluster)
            report["clusters_deleted"] = len(deleted)
            report["cluster_events_removed"] = removed
            if deleted:
                with self._reg_lock:
                    for c in deleted:
                        if c in self.clusters:
                            self.clusters.remove(c)
            if self.cfg.promote_in_maintenance:
                gate = self.cfg.cluster.promotion_num_events
                for c in survivors:
                    if c.acc.n >= gate and self._promote(c, t_now_us):
                        report["promoted"] += 1

            with self._reg_lock:
                line_snapshot = list(self.lines)
            _, line_deleted, line_report = line_maintenance(
                line_snapshot, t_now_us, self._scale_per_us, self.cfg.line,
                self._alloc_id, self.cfg.hibernation_enabled)
            report.update(line_report)
            if line_deleted:
                with self._reg_lock:
                    for L in line_deleted:
                        if L in self.lines:
                            self.lines.remove(L)
                self.dead_lines.extend(line_deleted)
            self._last_maintenance_us = t_now_us
            return report

    def _maintenance_loop(self):
        interval = self.cfg.maintenance_interval_us
        while not self._stop_evt.wait(0.001):
            st = self.stream_time_us
            if st is None:
                continue
            if self._next_maintenance_us is None:
                self._next_maintenance_us = (st // interval + 1) * interval
                continue
            if st >= self._next_maintenance_us:
                target = (st // interval) * interval
                self.run_maintenance(target)
                self._next_maintenance_us = target + interval

    # -- observation -------------------------------------------------------

    def snapshot(self, t_now_us: int | None = None) -> TrackSnapshot:
        """Consistent view of all live lines with geometry evaluated at t_now."""
        if t_now_us is None:
            t_now_us = self.stream_time_us if self.stream_time_us is not None else 0
        t_scaled = t_now_us * self._scale_per_us
        entries = []
        for L in self.lines:
            geom = L.geom   # immutable tuple: one read, internally consistent
            px, py, vx, vy, tref, dx, dy, length = geom
            f = t_scaled - tref
            angle = math.degrees(math.atan2(dy, dx)) % 180.0
            entries.append(LineSnap(L.display_id, L.state.value,
                                    px + vx * f, py + vy * f,
                                    angle, length, L.acc.n))
        entries.sort(key=lambda s: s.line_id)
        return TrackSnapshot(t_now_us, entries)

    def all_lines(self):
        """Live and dead lines, for transition audits."""
        return list(self.lines) + list(self.dead_lines)

    def disposition_counts(self) -> dict:
        return {d.value: n for d, n in self.counts.items()}

    def instrument_reset(self) -> None:
        """Drop timing samples collected so far (e.g. the warm-up phase)."""
        if self._instr is not None:
            self._instr["samples"] = {}

    def instrument(self) -> dict:
        """Per-stage timing rows: one per (n_lines, n_clusters) population."""
        if self._instr is None:
            raise RuntimeError("tracker was not constructed with instrumented=True")
        rows = []
        stage_totals = {"filter": [0, 0], "line_add": [0, 0],
                        "cluster_add": [0, 0], "chain": [0, 0]}
        for (nl, nc), r in sorted(self._instr["samples"].items()):
            row = {"n_lines": nl, "n_clusters": nc, "events": r[0]}
            for name, (s_idx, n_idx) in (("filter", (1, 2)),
                                         ("line_add", (3, 4)),
                                         ("cluster_add", (5, 6)),
                                         ("chain", (7, 8))):
                ns, n = r[s_idx], r[n_idx]
                row[f"{name}_ns"] = ns / n if n else 0.0
                row[f"{name}_events"] = n
                stage_totals[name][0] += ns
                stage_totals[name][1] += n
            rows.append(row)
        means = {f"{k}_ns": (v[0] / v[1] if v[1] else 0.0)
                 for k, v in stage_totals.items()}
        return {"rows": rows, "means": means}
