"""Synthetic event scenes with ground truth, and tracking-quality scoring.

Scenes are translating line segments emitting Poisson events along their
length, with bounded uniform perpendicular jitter, plus optional uniform
background noise. Motions: static, constant velocity, triangle-wave
oscillation with eventless dwells at the extremes (the direction-reversal
torture case), and smooth sinusoidal sweep.

Polarity follows the leading-edge model: the sign of the motion component
normal to the line decides ON vs OFF; motion along the line (or none) gives
random polarity.

Scoring matches tracked lines to truth tracks when midpoint and angle agree
(within 5 px / 10 deg) in more than half the overlapping snapshots, then
reports mean line lifetime, per-track ID switches, midpoint/direction RMS,
and unmatched (false) lines. Event pixels are integer, so an on-line event
can sit up to jitter + sqrt(2)/2 from the continuous line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Generation timestep; Poisson counts and kinematics are piecewise-constant
#: over one step, with uniform timestamp jitter inside it.
GEN_STEP_MS = 0.25

_MOTIONS = ("static", "linear", "oscillate", "sine")


@dataclass
class TrackSpec:
    x0: float
    y0: float
    x1: float
    y1: float
    rate: float                       # events per px of length per ms
    motion: str = "static"
    vx: float = 0.0                   # linear: px/ms
    vy: float = 0.0
    axis: tuple[float, float] = (1.0, 0.0)   # oscillate/sine translation axis
    amplitude_px: float = 0.0
    period_ms: float = 0.0
    dwell_ms: float = 0.0             # oscillate: eventless pause at extremes
    t_start_ms: float = 0.0
    t_end_ms: float | None = None
    jitter_px: float | None = None    # None: use the scene-wide jitter
    polarity: str = "auto"            # auto: sign of motion.normal; else on/off

    def __post_init__(self):
        if self.motion not in _MOTIONS:
            raise ValueError(f"unknown motion {self.motion!r}")
        if self.polarity not in ("auto", "on", "off"):
            raise ValueError(f"polarity must be auto/on/off, not {self.polarity!r}")
        if self.rate < 0:
            raise ValueError("rate must be >= 0")
        if math.hypot(self.x1 - self.x0, self.y1 - self.y0) <= 0:
            raise ValueError("degenerate segment")
        ax, ay = self.axis
        n = math.hypot(ax, ay)
        if self.motion in ("oscillate", "sine"):
            if n <= 0:
                raise ValueError("motion axis must be nonzero")
            self.axis = (ax / n, ay / n)
            if self.period_ms <= 0 or self.amplitude_px <= 0:
                raise ValueError("oscillate/sine need period_ms and amplitude_px")
        if self.motion == "oscillate" and not 0 <= self.dwell_ms < self.period_ms / 2:
            raise ValueError("dwell_ms must be in [0, period_ms/2)")

    @property
    def length(self) -> float:
        return math.hypot(self.x1 - self.x0, self.y1 - self.y0)

    @property
    def direction(self) -> tuple[float, float]:
        l = self.length
        return ((self.x1 - self.x0) / l, (self.y1 - self.y0) / l)

    @property
    def angle_deg(self) -> float:
        dx, dy = self.direction
        return math.degrees(math.atan2(dy, dx)) % 180.0

    def kinematics(self, t_ms):
        """Vectorized (offset_x, offset_y, vel_x, vel_y, emitting) at t_ms."""
        t = np.asarray(t_ms, dtype=float)
        if self.motion == "static":
            z = np.zeros_like(t)
            return z, z, z, z, np.ones_like(t, dtype=bool)
        if self.motion == "linear":
            on = np.ones_like(t, dtype=bool)
            return (self.vx * t, self.vy * t,
                    np.full_like(t, self.vx), np.full_like(t, self.vy), on)
        ux, uy = self.axis
        if self.motion == "sine":
            w = 2.0 * math.pi / self.period_ms
            s = self.amplitude_px * np.sin(w * t)
            v = self.amplitude_px * w * np.cos(w * t)
            on = np.ones_like(t, dtype=bool)
            return s * ux, s * uy, v * ux, v * uy, on
        # oscillate: -A -> +A over a leg, dwell, back, dwell
        leg = self.period_ms / 2.0 - self.dwell_ms
        speed = 2.0 * self.amplitude_px / leg
        tau = np.mod(t, self.period_ms)
        a = self.amplitude_px
        s = np.empty_like(tau)
        v = np.empty_like(tau)
        on = np.zeros_like(tau, dtype=bool)
        m1 = tau < leg
        s[m1] = -a + speed * tau[m1]
        v[m1] = speed
        on[m1] = True
        m2 = (~m1) & (tau < leg + self.dwell_ms)
        s[m2] = a
        v[m2] = 0.0
        m3 = (~m1) & (~m2) & (tau < 2 * leg + self.dwell_ms)
        s[m3] = a - speed * (tau[m3] - leg - self.dwell_ms)
        v[m3] = -speed
        on[m3] = True
        m4 = (~m1) & (~m2) & (~m3)
        s[m4] = -a
        v[m4] = 0.0
        return s * ux, s * uy, v * ux, v * uy, on

    def midpoint_at(self, t_ms: float) -> tuple[float, float]:
        ox, oy, _, _, _ = self.kinematics(np.array([t_ms]))
        return ((self.x0 + self.x1) / 2.0 + float(ox[0]),
                (self.y0 + self.y1) / 2.0 + float(oy[0]))


@dataclass
class SceneSpec:
    width: int = 346
    height: int = 260
    duration_ms: float = 1000.0
    noise_rate_per_ms: float = 0.0    # background events per ms, whole sensor
    jitter_px: float = 0.5
    tracks: list[TrackSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be positive")
        if self.noise_rate_per_ms < 0:
            raise ValueError("noise rate must be >= 0")


class GroundTruth:
    """True line geometry over time plus per-event associations.

    `assoc[i]` is the track index of event i, or -1 for noise. `at()` returns
    (mid_x, mid_y, angle_deg, length_px) or None when the track is inactive.
    """

    def __init__(self, scene: SceneSpec, assoc: np.ndarray | None = None):
        self.scene = scene
        self.assoc = assoc

    def track_ids(self):
        return range(len(self.scene.tracks))

    def at(self, track_id: int, t_us: int):
        tr = self.scene.tracks[track_id]
        t_ms = t_us / 1000.0
        end = tr.t_end_ms if tr.t_end_ms is not None else self.scene.duration_ms
        if not tr.t_start_ms <= t_ms <= end:
            return None
        mx, my = tr.midpoint_at(t_ms)
        return (mx, my, tr.angle_deg, tr.length)


def generate(scene: SceneSpec, seed: int = 0):
    """Sample the scene into an event stream.

    Returns (events, truth): events is an (N, 4) int64 array with columns
    (x, y, t_us, polarity), sorted by t; truth carries the per-event track
    association aligned with the rows. Deterministic per seed. Events
    falling outside the sensor are dropped.
    """
    rng = np.random.default_rng(seed)
    dt = GEN_STEP_MS
    n_steps = int(math.ceil(scene.duration_ms / dt))
    step_start = np.arange(n_steps) * dt
    t_mid = step_start + dt / 2.0

    xs_all = []
    ys_all = []
    ts_all = []
    ps_all = []
    assoc_all = []

    for tid, tr in enumerate(scene.tracks):
        end = tr.t_end_ms if tr.t_end_ms is not None else scene.duration_ms
        ox, oy, vx, vy, emitting = tr.kinematics(t_mid)
        active = (t_mid >= tr.t_start_ms) & (t_mid < end) & emitting
        lam = np.where(active, tr.rate * tr.length * dt, 0.0)
        counts = rng.poisson(lam)
        total = int(counts.sum())
        if total == 0:
            continue
        idx = np.repeat(np.arange(n_steps), counts)
        u = rng.random(total)
        jitter = scene.jitter_px if tr.jitter_px is None else tr.jitter_px
        jit = (rng.random(total) - 0.5) * 2.0 * jitter
        dx, dy = tr.direction
        nx, ny = -dy, dx
        ex = tr.x0 + u * (tr.x1 - tr.x0) + ox[idx] + jit * nx
        ey = tr.y0 + u * (tr.y1 - tr.y0) + oy[idx] + jit * ny
        et = (step_start[idx] + rng.random(total) * dt) * 1000.0
        if tr.polarity == "auto":
            vn = vx[idx] * nx + vy[idx] * ny
            pol = np.where(vn > 1e-9, 1, np.where(vn < -1e-9, 0,
                                                  rng.integers(0, 2, total)))
        else:
            pol = np.full(total, 1 if tr.polarity == "on" else 0)
        xs_all.append(ex)
        ys_all.append(ey)
        ts_all.append(et)
        ps_all.append(pol)
        assoc_all.append(np.full(total, tid, dtype=np.int64))

    if scene.noise_rate_per_ms > 0:
        lam = scene.noise_rate_per_ms * dt
        counts = rng.poisson(np.full(n_steps, lam))
        total = int(counts.sum())
        if total:
            idx = np.repeat(np.arange(n_steps), counts)
            xs_all.append(rng.random(total) * scene.width)
            ys_all.append(rng.random(total) * scene.height)
            ts_all.append((step_start[idx] + rng.random(total) * dt) * 1000.0)
            ps_all.append(rng.integers(0, 2, total))
            assoc_all.append(np.full(total, -1, dtype=np.int64))

    if not xs_all:
        return np.empty((0, 4), dtype=np.int64), GroundTruth(scene, np.empty(0, dtype=np.int64))

    ex = np.concatenate(xs_all)
    ey = np.concatenate(ys_all)
    et = np.concatenate(ts_all)
    pol = np.concatenate(ps_all)
    assoc = np.concatenate(assoc_all)

    xi = np.rint(ex).astype(np.int64)
    yi = np.rint(ey).astype(np.int64)
    ti = et.astype(np.int64)
    keep = (xi >= 0) & (xi < scene.width) & (yi >= 0) & (yi < scene.height)
    xi, yi, ti, pol, assoc = xi[keep], yi[keep], ti[keep], pol[keep], assoc[keep]

    order = np.argsort(ti, kind="stable")
    events = np.column_stack((xi[order], yi[order], ti[order],
                              pol[order].astype(np.int64)))
    return events, GroundTruth(scene, assoc[order])


# -- scene files -----------------------------------------------------------

_SCENE_HEADER = "# evscene v1"

_TRACK_FLOAT_KEYS = ("x0", "y0", "x1", "y1", "rate", "vx", "vy",
                     "amplitude_px", "period_ms", "dwell_ms",
                     "t_start_ms", "t_end_ms", "jitter_px")


def parse_scene(text: str) -> SceneSpec:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _SCENE_HEADER:
        raise ValueError(f"scene file must start with {_SCENE_HEADER!r}")
    scene_kw: dict = {}
    tracks: list[TrackSpec] = []
    for lineno, line in enumerate(lines[1:], 2):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("track "):
            kw: dict = {}
            for token in stripped[len("track "):].split():
                if "=" not in token:
                    raise ValueError(f"line {lineno}: bad track token {token!r}")
                k, v = token.split("=", 1)
                if k in ("motion", "polarity"):
                    kw[k] = v
                elif k == "axis":
                    ax, ay = v.split(",")
                    kw[k] = (float(ax), float(ay))
                elif k in _TRACK_FLOAT_KEYS:
                    kw[k] = float(v)
                else:
                    raise ValueError(f"line {lineno}: unknown track key {k!r}")
            try:
                tracks.append(TrackSpec(**kw))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        elif "=" in stripped:
            k, v = (s.strip() for s in stripped.split("=", 1))
            if k in ("width", "height"):
                scene_kw[k] = int(v)
            elif k in ("duration_ms", "noise_rate_per_ms", "jitter_px"):
                scene_kw[k] = float(v)
            else:
                raise ValueError(f"line {lineno}: unknown scene key {k!r}")
        else:
            raise ValueError(f"line {lineno}: expected key = value or track ...")
    return SceneSpec(tracks=tracks, **scene_kw)


def serialize_scene(scene: SceneSpec) -> str:
    out = [_SCENE_HEADER,
           f"width = {scene.width}",
           f"height = {scene.height}",
           f"duration_ms = {scene.duration_ms:g}",
           f"noise_rate_per_ms = {scene.noise_rate_per_ms:g}",
           f"jitter_px = {scene.jitter_px:g}"]
    for tr in scene.tracks:
        parts = [f"track x0={tr.x0:g} y0={tr.y0:g} x1={tr.x1:g} y1={tr.y1:g}",
                 f"rate={tr.rate:g}", f"motion={tr.motion}"]
        if tr.motion == "linear":
            parts.append(f"vx={tr.vx:g} vy={tr.vy:g}")
        elif tr.motion in ("oscillate", "sine"):
            parts.append(f"axis={tr.axis[0]:g},{tr.axis[1]:g} "
                         f"amplitude_px={tr.amplitude_px:g} "
                         f"period_ms={tr.period_ms:g}")
            if tr.motion == "oscillate":
                parts.append(f"dwell_ms={tr.dwell_ms:g}")
        if tr.t_start_ms:
            parts.append(f"t_start_ms={tr.t_start_ms:g}")
        if tr.t_end_ms is not None:
            parts.append(f"t_end_ms={tr.t_end_ms:g}")
        if tr.jitter_px is not None:
            parts.append(f"jitter_px={tr.jitter_px:g}")
        if tr.polarity != "auto":
            parts.append(f"polarity={tr.polarity}")
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def load_scene(path) -> SceneSpec:
    with open(path, "r", encoding="ascii") as fh:
        return parse_scene(fh.read())


# -- truth files -----------------------------------------------------------

_TRUTH_HEADER = "# evtruth v1"
TRUTH_CADENCE_US = 1000


def write_truth(truth: GroundTruth, path) -> None:
    """Sample analytic truth at a fixed cadence into a CSV."""
    scene = truth.scene
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_TRUTH_HEADER + "\n")
        t = 0
        end = int(scene.duration_ms * 1000)
        while t <= end:
            for tid in truth.track_ids():
                row = truth.at(tid, t)
                if row is None:
                    continue
                mx, my, ang, length = row
                fh.write(f"{t},{tid},{mx:.6f},{my:.6f},{ang:.6f},{length:.6f}\n")
            t += TRUTH_CADENCE_US


class SampledTruth:
    """Truth loaded from a file; nearest-sample lookup at query times."""

    def __init__(self, series: dict[int, np.ndarray]):
        # track id -> array of (t_us, mx, my, angle, length) sorted by t
        self.series = series

    def track_ids(self):
        return sorted(self.series.keys())

    def at(self, track_id: int, t_us: int):
        arr = self.series.get(track_id)
        if arr is None or len(arr) == 0:
            return None
        ts = arr[:, 0]
        i = int(np.searchsorted(ts, t_us))
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(ts):
                if best is None or abs(ts[j] - t_us) < abs(ts[best] - t_us):
                    best = j
        if best is None or abs(ts[best] - t_us) > 2 * TRUTH_CADENCE_US:
            return None
        _, mx, my, ang, length = arr[best]
        return (float(mx), float(my), float(ang), float(length))


def load_truth(path) -> SampledTruth:
    rows: dict[int, list] = {}
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != _TRUTH_HEADER:
            raise ValueError(f"truth file must start with {_TRUTH_HEADER!r}")
        for lineno, line in enumerate(fh, 2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ValueError(f"line {lineno}: expected 6 fields")
            t, tid = int(parts[0]), int(parts[1])
            rows.setdefault(tid, []).append(
                (t, float(parts[2]), float(parts[3]),
                 float(parts[4]), float(parts[5])))
    return SampledTruth({tid: np.array(r, dtype=float)
                         for tid, r in rows.items()})


# -- scoring ---------------------------------------------------------------

MATCH_DIST_PX = 5.0
MATCH_ANGLE_DEG = 10.0


def _angle_diff(a: float, b: float) -> float:
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)


def score(snapshots, truth, *, match_dist_px: float = MATCH_DIST_PX,
          match_angle_deg: float = MATCH_ANGLE_DEG) -> dict:
    """Match tracked lines to truth tracks and compute quality metrics.

    Only lines that earned an ID (positive, i.e. activated) participate.
    A line matches a track when more than half of the overlapping snapshots
    agree within the thresholds. Lifetimes are measured from first to last
    appearance, right-censored by the end of the sequence.
    """
    series: dict[int, list] = {}
    for snap in snapshots:
        for s in snap.lines:
            if s.line_id > 0:
                series.setdefault(s.line_id, []).append(
                    (snap.timestamp_us, s.mid_x, s.mid_y, s.angle_deg))

    assignment: dict[int, int] = {}
    overlap_cache: dict[int, list] = {}
    for line_id, rows in series.items():
        best_tid = None
        best_frac = 0.0
        best_pairs = None
        for tid in truth.track_ids():
            pairs = []
            hits = 0
            for t, mx, my, ang in rows:
                ref = truth.at(tid, t)
                if ref is None:
                    continue
                tx, ty, tang, _ = ref
                dist = math.hypot(mx - tx, my - ty)
                dang = _angle_diff(ang, tang)
                pairs.append((dist, dang))
                if dist < match_dist_px and dang < match_angle_deg:
                    hits += 1
            if pairs and hits / len(pairs) > 0.5:
                frac = hits / len(pairs)
                if frac > best_frac:
                    best_frac = frac
                    best_tid = tid
                    best_pairs = pairs
        if best_tid is not None:
            assignment[line_id] = best_tid
            overlap_cache[line_id] = best_pairs

    lifetimes = []
    sq_dist = []
    sq_ang = []
    for line_id, tid in assignment.items():
        rows = series[line_id]
        lifetimes.append((rows[-1][0] - rows[0][0]) / 1e6)
        for dist, dang in overlap_cache[line_id]:
            sq_dist.append(dist * dist)
            sq_ang.append(dang * dang)

    per_track_switches: dict[int, int] = {}
    snap_times = sorted({snap.timestamp_us for snap in snapshots})
    presence: dict[int, set] = {}
    for line_id, rows in series.items():
        presence[line_id] = {t for t, *_ in rows}
    for tid in truth.track_ids():
        assigned = [lid for lid, t in assignment.items() if t == tid]
        current = None
        switches = 0
        for t in snap_times:
            here = [lid for lid in assigned if t in presence[lid]]
            if current is not None and current in here:
                continue
            if here:
                if current is not None:
                    switches += 1
                current = min(here)
        per_track_switches[tid] = switches

    n_tracks = len(list(truth.track_ids()))
    return {
        "tracked_lines": len(series),
        "matched_lines": len(assignment),
        "false_lines": len(series) - len(assignment),
        "mean_lifetime_s": (sum(lifetimes) / len(lifetimes)) if lifetimes else 0.0,
        "total_id_switches": sum(per_track_switches.values()),
        "per_track_id_switches": per_track_switches,
        "midpoint_rms_px": math.sqrt(sum(sq_dist) / len(sq_dist)) if sq_dist else 0.0,
        "direction_rms_deg": math.sqrt(sum(sq_ang) / len(sq_ang)) if sq_ang else 0.0,
        "n_tracks": n_tracks,
        "match_dist_px": match_dist_px,
        "match_angle_deg": match_angle_deg,
    }
