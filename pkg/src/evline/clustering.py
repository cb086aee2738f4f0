"""Cluster formation from chains of unassigned events, and cluster membership.

Unassigned events that survive filtering but match no line and no cluster try
to recruit a chain of recent neighbors from their polarity's unassigned
surface. The chain walks pixel to pixel, preferring the three neighbors that
continue the previous step's direction and widening to the two flanking
neighbors only when those are empty. A long enough chain becomes a cluster;
clusters accumulate events near their inferred 2D line until they are planar
and populous enough to be promoted.
"""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass

from .events import NEVER, SurfaceOfActiveEvents
from .geometry import EventAccumulator, principal_axis_2d

#: 8-neighborhood ring in counter-clockwise order starting at +x.
RING = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))

#: Search patterns per last-step direction index: primary continues the walk
#: (the last direction and its two immediate ring neighbors), extended widens
#: by one more ring position on each side.
CHAIN_PRIMARY = tuple(
    (RING[(i - 1) % 8], RING[i], RING[(i + 1) % 8]) for i in range(8)
)
CHAIN_EXTENDED = tuple(
    (RING[(i - 2) % 8], RING[(i + 2) % 8]) for i in range(8)
)

_DIR_INDEX = {RING[i]: i for i in range(8)}


@dataclass
class ClusterConfig:
    creation_num_events: int = 7
    addition_threshold_px: float = 1.3
    merge_angle_deg: float = 15.0
    cleanup_event_age_us: int = 50_000
    deletion_no_events_us: int = 40_000
    min_events_after_cleanup: int = 3
    # the along-line acceptance floor for clusters too young to have length
    midpoint_min_extent_px: float = 10.0
    chain_seed_max_age_us: int = 70_000
    chain_max_length: int = 20
    promotion_num_events: int = 35

    def __post_init__(self):
        if self.creation_num_events < 2:
            raise ValueError("creation_num_events must be >= 2")
        if self.chain_max_length < self.creation_num_events:
            raise ValueError("chain_max_length must cover creation_num_events")
        for name in ("addition_threshold_px", "merge_angle_deg",
                     "cleanup_event_age_us", "deletion_no_events_us",
                     "midpoint_min_extent_px", "chain_seed_max_age_us"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def grow_chain(sae: SurfaceOfActiveEvents, x0: int, y0: int, t0: int,
               cfg: ClusterConfig) -> list[tuple[int, int, int]]:
    """Walk a chain of recent events starting at (x0, y0, t0).

    The first hop considers the full 3x3 ring; later hops use the primary
    pattern for the last step direction, then the extended pattern. Among the
    eligible neighbors (in bounds, not yet in the chain, age within
    chain_seed_max_age of the seed) the youngest wins; ties break in raster
    order (smaller y, then smaller x). May return a single-element chain.
    """
    cutoff = t0 - cfg.chain_seed_max_age_us
    grid = sae.grid
    w = sae.width
    h = sae.height
    chain = [(x0, y0, t0)]
    visited = {(x0, y0)}
    cx, cy = x0, y0
    last_dir = -1
    max_len = cfg.chain_max_length
    while len(chain) < max_len:
        if last_dir < 0:
            groups = (RING,)
        else:
            groups = (CHAIN_PRIMARY[last_dir], CHAIN_EXTENDED[last_dir])
        best_t = NEVER
        best_x = best_y = -1
        best_step = None
        for group in groups:
            for step in group:
                nx = cx + step[0]
                ny = cy + step[1]
                if nx < 0 or nx >= w or ny < 0 or ny >= h:
                    continue
                if (nx, ny) in visited:
                    continue
                tt = grid[ny * w + nx]
                if tt < cutoff:    # never-fired pixels carry the sentinel, far below
                    continue
                if (tt > best_t
                        or (tt == best_t
                            and (ny < best_y or (ny == best_y and nx < best_x)))):
                    best_t = tt
                    best_x = nx
                    best_y = ny
                    best_step = step
            if best_step is not None:
                break
        if best_step is None:
            break
        chain.append((best_x, best_y, best_t))
        visited.add((best_x, best_y))
        cx, cy = best_x, best_y
        last_dir = _DIR_INDEX[best_step]
    return chain


class Cluster:
    """A provisional event group with an inferred 2D line.

    The inferred line is the total-least-squares fit of member pixel
    coordinates: centroid plus principal covariance axis. It is refreshed on
    every mutation, cheap thanks to the accumulator's running sums, so the
    membership test keeps up with a moving line. `line` is an immutable tuple
    (cx, cy, dx, dy, length) swapped atomically; readers never need the lock.
    """

    __slots__ = ("acc", "polarity", "created_us", "order", "line", "lock")

    def __init__(self, acc: EventAccumulator, polarity: int,
                 created_us: int, order: int):
        self.acc = acc
        self.polarity = polarity
        self.created_us = created_us
        self.order = order
        self.line = (0.0, 0.0, 1.0, 0.0, 0.0)
        self.lock = threading.Lock()
        self.refresh_line()

    @property
    def count(self) -> int:
        return self.acc.n

    def newest_t(self) -> int:
        return self.acc.newest_t()

    def refresh_line(self) -> None:
        acc = self.acc
        n = acc.n
        if n == 0:
            return
        inv = 1.0 / n
        cx = acc.x0 + acc.sx * inv
        cy = acc.y0 + acc.sy * inv
        if n < 2:
            self.line = (cx, cy, 1.0, 0.0, 0.0)
            return
        m = 1.0 / (n - 1)
        cxx = (acc.sxx - acc.sx * acc.sx * inv) * m
        cxy = (acc.sxy - acc.sx * acc.sy * inv) * m
        cyy = (acc.syy - acc.sy * acc.sy * inv) * m
        dx, dy, sigma = principal_axis_2d(cxx, cxy, cyy)
        self.line = (cx, cy, dx, dy, math.sqrt(12.0) * sigma)

    def add(self, x: int, y: int, t: int) -> None:
        self.acc.add(x, y, t)
        self.refresh_line()

    def absorb(self, other: "Cluster") -> None:
        self.acc.merge_from(other.acc)
        self.refresh_line()


def try_create_cluster(chain, polarity: int, t_now: int, order: int,
                       scale_per_us: float, cfg: ClusterConfig):
    """Create a cluster from a chain, or return None if the chain is short."""
    if len(chain) < cfg.creation_num_events:
        return None
    acc = EventAccumulator(scale_per_us)
    for x, y, t in sorted(chain, key=lambda e: e[2]):
        acc.add(x, y, t)
    return Cluster(acc, polarity, t_now, order)


class ClusterAddResult(enum.Enum):
    ADDED = "added"
    MERGED = "merged"
    REJECTED = "rejected"


def try_add_to_cluster(x: int, y: int, t: int, polarity: int,
                       clusters, cfg: ClusterConfig):
    """Offer an event to the clusters.

    Returns (result, receiving cluster or None, list of absorbed clusters).
    Candidates must have the event within addition_threshold_px of their
    inferred line and within its length (at least midpoint_min_extent_px)
    along it. A single candidate takes the event; multiple candidates first
    merge every candidate aligned with the oldest to within merge_angle_deg
    into that oldest cluster, which then takes the event; if none align, the
    nearest candidate takes it.
    """
    thr = cfg.addition_threshold_px
    min_ext = cfg.midpoint_min_extent_px
    cands = []
    for c in clusters:
        if c.polarity != polarity:
            continue
        cx, cy, dx, dy, length = c.line
        rx = x - cx
        ry = y - cy
        a = dx * ry - dy * rx
        if a < 0.0:
            a = -a
        if a > thr:
            continue
        b = rx * dx + ry * dy
        if b < 0.0:
            b = -b
        if b > (length if length > min_ext else min_ext):
            continue
        cands.append((a, c))
    if not cands:
        return ClusterAddResult.REJECTED, None, ()
    if len(cands) == 1:
        c = cands[0][1]
        with c.lock:
            c.add(x, y, t)
        return ClusterAddResult.ADDED, c, ()

    cos_merge = math.cos(math.radians(cfg.merge_angle_deg))
    oldest = min(cands, key=lambda ac: ac[1].order)[1]
    odx, ody = oldest.line[2], oldest.line[3]
    absorbed = []
    with oldest.lock:
        for a, c in cands:
            if c is oldest:
                continue
            cos_ang = abs(odx * c.line[2] + ody * c.line[3])
            if cos_ang > cos_merge:
                with c.lock:
                    oldest.absorb(c)
                absorbed.append(c)
        if absorbed:
            oldest.add(x, y, t)
            return ClusterAddResult.MERGED, oldest, absorbed
    nearest = min(cands, key=lambda ac: ac[0])[1]
    with nearest.lock:
        nearest.add(x, y, t)
    return ClusterAddResult.ADDED, nearest, ()


def cluster_maintenance(clusters, t_now: int, cfg: ClusterConfig):
    """Age out events, delete stale or starved clusters, refresh lines.

    Returns (survivors, deleted, events_removed).
    """
    survivors = []
    deleted = []
    removed = 0
    age_cutoff = t_now - cfg.cleanup_event_age_us
    stale_cutoff = t_now - cfg.deletion_no_events_us
    for c in clusters:
        with c.lock:
            removed += c.acc.drop_older_than(age_cutoff)
            if c.acc.n < cfg.min_events_after_cleanup:
                deleted.append(c)
                continue
            if c.acc.newest_t() < stale_cutoff:
                deleted.append(c)
                continue
            c.refresh_line()
            survivors.append(c)
    return survivors, deleted, removed
