"""Line entities and their lifecycle.

A line is born Initializing when a cluster's events become planar enough
(promotion), earns its ID by demonstrating a connected length during the
initialization period, then alternates between Active tracking and a
Hibernated freeze driven by recent-event density. Hibernation parks the
midpoint at the event centroid and exempts the line's events from age-based
cleanup, so a line surviving an eventless spell resumes under the same ID.

Geometry used by the ingest-path membership test lives in `geom`, an
immutable tuple (px, py, vx, vy, tref, dx, dy, length) with the midpoint
transported as p(t) = (px, py) + v * (t - tref) in scaled time; it is swapped
whole so readers never see a half-updated line.
"""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass

from .geometry import (
    DegenerateGeometryError,
    EventAccumulator,
    InsufficientDataError,
    MidpointMode,
    PlaneFit,
    connected_length,
    fit_plane,
    line_direction,
    line_length,
    plane_velocity,
)


class LineState(enum.Enum):
    INITIALIZING = "INIT"
    ACTIVE = "ACTIVE"
    HIBERNATED = "HIBER"


#: Terminal marker used in transition logs (not a live state).
DELETED = "DELETED"

_FIG6_EDGES = {
    ("INIT", "ACTIVE"), ("INIT", DELETED),
    ("ACTIVE", "HIBER"), ("ACTIVE", DELETED),
    ("HIBER", "ACTIVE"), ("HIBER", DELETED),
}


def is_legal_transition_log(log) -> bool:
    """True iff the log starts at INIT and walks only legal state edges."""
    if not log or log[0][1] != "INIT":
        return False
    for (_, a), (_, b) in zip(log, log[1:]):
        if (a, b) not in _FIG6_EDGES:
            return False
    return True


@dataclass
class LineConfig:
    promotion_threshold_px: float = 1.2
    promotion_num_events: int = 35
    init_length_px: float = 70.0
    init_period_us: int = 90_000
    addition_threshold_px: float = 1.8
    addition_b_mode: str = "length"          # or "half_length"
    merge_angle_deg: float = 8.0
    merge_distance_px: float = 3.5
    hibernation_density: float = 0.08        # events / (px * ms)
    density_window_us: int = 25_000
    cleanup_event_age_us: int = 50_000
    deletion_no_events_us: int = 200_000
    hibernation_timeout_us: int = 1_000_000
    min_active_length_px: float = 35.0
    wake_mode: str = "density"               # or "any_event"
    hibernation_hysteresis: float = 1.0
    length_mode: str = "variance"            # or "scaled_vector"

    def __post_init__(self):
        for name in ("promotion_threshold_px", "init_length_px",
                     "init_period_us", "addition_threshold_px",
                     "merge_angle_deg", "merge_distance_px",
                     "hibernation_density", "density_window_us",
                     "cleanup_event_age_us", "deletion_no_events_us",
                     "hibernation_timeout_us", "min_active_length_px",
                     "hibernation_hysteresis"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.merge_angle_deg < 90:
            raise ValueError("merge_angle_deg must be in (0, 90)")
        if self.addition_b_mode not in ("length", "half_length"):
            raise ValueError(f"unknown addition_b_mode {self.addition_b_mode!r}")
        if self.wake_mode not in ("density", "any_event"):
            raise ValueError(f"unknown wake_mode {self.wake_mode!r}")
        if self.length_mode not in ("variance", "scaled_vector"):
            raise ValueError(f"unknown length_mode {self.length_mode!r}")


class Line:
    __slots__ = ("acc", "state", "id", "order", "created_us",
                 "state_entered_us", "newest_event_us", "hibernated_since_us",
                 "fit", "geom", "lock", "transitions", "delete_reason")

    def __init__(self, acc: EventAccumulator, created_us: int, order: int):
        self.acc = acc
        self.state = LineState.INITIALIZING
        self.id = 0                      # assigned at activation
        self.order = order               # creation sequence, provisional identity
        self.created_us = created_us
        self.state_entered_us = created_us
        self.newest_event_us = acc.newest_t()
        self.hibernated_since_us = 0
        self.fit: PlaneFit | None = None
        self.geom = (0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
        self.lock = threading.Lock()
        self.transitions: list[tuple[int, str]] = [(created_us, "INIT")]
        self.delete_reason = ""

    @property
    def display_id(self) -> int:
        """Positive ID once Active; negative provisional ID before that."""
        return self.id if self.id > 0 else -self.order

    def _log(self, t_us: int, state: str) -> None:
        self.transitions.append((t_us, state))

    def refresh_geometry(self, cfg: LineConfig) -> None:
        """Refit the plane and swap in a fresh geometry tuple.

        Raises InsufficientDataError / DegenerateGeometryError when the
        events no longer define a line; callers decide the consequence.
        """
        fit = fit_plane(self.acc)
        d = line_direction(fit.n)
        vx, vy = plane_velocity(fit)
        length = line_length(fit, d, cfg.length_mode)
        self.fit = fit
        gx, gy, gt = fit.g
        self.geom = (gx, gy, vx, vy, gt, d[0], d[1], length)

    def freeze_geometry(self) -> None:
        """Park the line: midpoint pinned at the event centroid, zero drift."""
        gx, gy, _ = self.fit.g
        _, _, _, _, _, dx, dy, length = self.geom
        self.geom = (gx, gy, 0.0, 0.0, 0.0, dx, dy, length)

    def midpoint_at(self, t_scaled: float) -> tuple[float, float]:
        px, py, vx, vy, tref, _, _, _ = self.geom
        f = t_scaled - tref
        return (px + vx * f, py + vy * f)

    def density(self, t_now_us: int, cfg: LineConfig) -> float:
        """Recent-event density in events per pixel of length per ms."""
        length = self.geom[7]
        if length <= 1e-9:
            return 0.0
        recent = self.acc.count_newer_than(t_now_us - cfg.density_window_us)
        return recent / (length * (cfg.density_window_us / 1000.0))

    def hibernate(self, t_now_us: int) -> None:
        self.state = LineState.HIBERNATED
        self.state_entered_us = t_now_us
        self.hibernated_since_us = t_now_us
        self.freeze_geometry()
        self._log(t_now_us, "HIBER")

    def wake(self, t_now_us: int, cfg: LineConfig) -> bool:
        """Hibernated -> Active; shed stale events, refit over the rest.

        The frozen backlog only served to hold the geometry through the
        quiet spell; tracking resumes on recent activity alone, under the
        same retention window every Active line lives by. Returns False
        (and stays Hibernated, frozen geometry intact) if the remainder
        no longer fits a line.
        """
        self.acc.drop_older_than(t_now_us - cfg.cleanup_event_age_us)
        try:
            self.refresh_geometry(cfg)
        except (InsufficientDataError, DegenerateGeometryError):
            return False
        self.state = LineState.ACTIVE
        self.state_entered_us = t_now_us
        self._log(t_now_us, "ACTIVE")
        return True


class LineAddResult(enum.Enum):
    ADDED = "added"
    AMBIGUOUS = "ambiguous"
    REJECTED = "rejected"


def try_add_to_line(x: int, y: int, t_us: int, t_scaled: float,
                    lines, cfg: LineConfig):
    """Offer an event to the lines.

    The event must fall within addition_threshold_px perpendicular of a
    line's transported midpoint axis and within the along-line bound. Exactly
    one qualifying line takes the event; two or more → the event is dropped
    as ambiguous; none → rejected onward to cluster addition.
    """
    thr = cfg.addition_threshold_px
    halve = cfg.addition_b_mode == "half_length"
    matched = None
    for L in lines:
        px, py, vx, vy, tref, dx, dy, length = L.geom
        f = t_scaled - tref
        rx = x - (px + vx * f)
        ry = y - (py + vy * f)
        a = dx * ry - dy * rx
        if a < 0.0:
            a = -a
        if a >= thr:
            continue
        b = rx * dx + ry * dy
        if b < 0.0:
            b = -b
        if b >= (length * 0.5 if halve else length):
            continue
        if matched is not None:
            return LineAddResult.AMBIGUOUS, None
        matched = L
    if matched is None:
        return LineAddResult.REJECTED, None
    L = matched
    with L.lock:
        L.acc.add(x, y, t_us)
        L.newest_event_us = t_us
        if L.state is LineState.HIBERNATED:
            if cfg.wake_mode == "any_event":
                L.wake(t_us, cfg)
            else:
                wake_at = cfg.hibernation_density * cfg.hibernation_hysteresis
                if L.density(t_us, cfg) >= wake_at:
                    L.wake(t_us, cfg)
    return LineAddResult.ADDED, L


def try_promote(cluster, t_now_us: int, order: int, cfg: LineConfig):
    """Promote a cluster to an Initializing line if its events are planar.

    The caller gates on the event count; here the plane is fitted and the
    smallest-eigenvalue spread sqrt(lambda_3) must be under the promotion
    threshold. Returns the new Line (owning the cluster's accumulator) or
    None; the caller destroys the cluster on success.
    """
    try:
        fit = fit_plane(cluster.acc)
    except (InsufficientDataError, DegenerateGeometryError):
        return None
    if math.sqrt(fit.eigenvalues[2]) >= cfg.promotion_threshold_px:
        return None
    line = Line(cluster.acc, t_now_us, order)
    try:
        line.refresh_geometry(cfg)
    except (InsufficientDataError, DegenerateGeometryError):
        return None
    return line


def finish_initialization(line: Line, t_now_us: int, scale_per_us: float,
                          cfg: LineConfig, alloc_id) -> bool:
    """Graduate an Initializing line to Active, or reject it.

    The line passes if its events, transported to t_now, cover a connected
    span of at least init_length_px. On success the line receives its unique
    ID from alloc_id().
    """
    try:
        line.refresh_geometry(cfg)
    except (InsufficientDataError, DegenerateGeometryError):
        return False
    acc = line.acc
    d = (line.geom[5], line.geom[6])
    span = connected_length(acc.xs, acc.ys, acc.ts, line.fit, d,
                            t_now_us, scale_per_us)
    if span < cfg.init_length_px:
        return False
    line.id = alloc_id()
    line.state = LineState.ACTIVE
    line.state_entered_us = t_now_us
    line._log(t_now_us, "ACTIVE")
    return True


def update_hibernation(line: Line, t_now_us: int, cfg: LineConfig) -> str:
    """Apply the density rule; returns "hibernated", "woken", or ""."""
    if line.state is LineState.ACTIVE:
        if line.density(t_now_us, cfg) < cfg.hibernation_density:
            line.hibernate(t_now_us)
            return "hibernated"
    elif line.state is LineState.HIBERNATED:
        wake_at = cfg.hibernation_density * cfg.hibernation_hysteresis
        if line.density(t_now_us, cfg) >= wake_at and line.wake(t_now_us, cfg):
            return "woken"
    return ""


def _merge_precedence(line: Line):
    # ID'd lines outrank provisional ones; lower ID (older creation) wins
    return (0, line.id) if line.id > 0 else (1, line.order)


def line_maintenance(lines, t_now_us: int, scale_per_us: float,
                     cfg: LineConfig, alloc_id, hibernation_enabled: bool = True):
    """Periodic line pass: initialization deadlines, cleanup, refits,
    hibernation, deletions, and the merge sweep.

    Returns (survivors, deleted, report dict).
    """
    report = {"lines_activated": 0, "lines_deleted": 0, "lines_hibernated": 0,
              "lines_woken": 0, "lines_merged": 0, "line_events_removed": 0}
    survivors: list[Line] = []
    deleted: list[Line] = []

    def kill(line: Line, reason: str) -> None:
        line.delete_reason = reason
        line._log(t_now_us, DELETED)
        deleted.append(line)
        report["lines_deleted"] += 1

    for L in lines:
        with L.lock:
            if L.state is LineState.INITIALIZING:
                if t_now_us - L.created_us >= cfg.init_period_us:
                    if not finish_initialization(L, t_now_us, scale_per_us,
                                                 cfg, alloc_id):
                        kill(L, "initialization_failed")
                        continue
                    report["lines_activated"] += 1
                    # fall through: the newborn faces the same density rule
                    # and retention cleanup as any seasoned Active line, so
                    # no pass ever leaves an Active line holding stale events
                else:
                    # keep the provisional geometry tracking the motion
                    try:
                        L.refresh_geometry(cfg)
                    except (InsufficientDataError, DegenerateGeometryError):
                        kill(L, "degenerate")
                        continue
                    survivors.append(L)
                    continue

            if L.state is LineState.ACTIVE:
                # density first: a starving line freezes before cleanup can
                # shrink it past the length floor
                if hibernation_enabled and update_hibernation(L, t_now_us, cfg):
                    report["lines_hibernated"] += 1
                    survivors.append(L)
                    continue
                report["line_events_removed"] += L.acc.drop_older_than(
                    t_now_us - cfg.cleanup_event_age_us)
                if L.acc.n < 3:
                    kill(L, "too_few_events")
                    continue
                try:
                    L.refresh_geometry(cfg)
                except (InsufficientDataError, DegenerateGeometryError):
                    kill(L, "degenerate")
                    continue
                if L.geom[7] < cfg.min_active_length_px:
                    kill(L, "too_short")
                    continue
                if L.newest_event_us < t_now_us - cfg.deletion_no_events_us:
                    kill(L, "starved")
                    continue
                survivors.append(L)
                continue

            # Hibernated: no event-age cleanup, only the timeout and wake rule
            if t_now_us - L.hibernated_since_us > cfg.hibernation_timeout_us:
                kill(L, "hibernation_timeout")
                continue
            if update_hibernation(L, t_now_us, cfg) == "woken":
                report["lines_woken"] += 1
            survivors.append(L)

    merged = _merge_pass(survivors, t_now_us, scale_per_us, cfg, report)
    for L in merged:
        L.delete_reason = "merged"
        L._log(t_now_us, DELETED)
        deleted.append(L)
        survivors.remove(L)
    return survivors, deleted, report


def _merge_pass(lines, t_now_us: int, scale_per_us: float,
                cfg: LineConfig, report) -> list:
    """Absorb coincident lines pairwise into the lower-precedence-key line."""
    if len(lines) < 2:
        return []
    cos_merge = math.cos(math.radians(cfg.merge_angle_deg))
    max_dist = cfg.merge_distance_px
    t_scaled = t_now_us * scale_per_us
    ordered = sorted(lines, key=_merge_precedence)
    gone: set[int] = set()
    absorbed: list = []
    for i in range(len(ordered) - 1):
        A = ordered[i]
        if id(A) in gone:
            continue
        for j in range(i + 1, len(ordered)):
            B = ordered[j]
            if id(B) in gone:
                continue
            adx, ady = A.geom[5], A.geom[6]
            bdx, bdy = B.geom[5], B.geom[6]
            if abs(adx * bdx + ady * bdy) <= cos_merge:
                continue
            ax, ay = A.midpoint_at(t_scaled)
            bx, by = B.midpoint_at(t_scaled)
            # perpendicular offsets of each midpoint from the other's axis
            da = abs(adx * (by - ay) - ady * (bx - ax))
            db = abs(bdx * (ay - by) - bdy * (ax - bx))
            if da >= max_dist or db >= max_dist:
                continue
            with A.lock, B.lock:
                A.acc.merge_from(B.acc)
                if B.newest_event_us > A.newest_event_us:
                    A.newest_event_us = B.newest_event_us
                if A.state is not LineState.HIBERNATED:
                    # a hibernated donor may carry events older than the
                    # retention window; an awake survivor must not keep them
                    report["line_events_removed"] += A.acc.drop_older_than(
                        t_now_us - cfg.cleanup_event_age_us)
                    try:
                        A.refresh_geometry(cfg)
                    except (InsufficientDataError, DegenerateGeometryError):
                        pass
            gone.add(id(B))
            absorbed.append(B)
            report["lines_merged"] += 1
    return absorbed
