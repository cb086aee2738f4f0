"""Event and track file formats, plus overlay rendering.

Event files are ASCII CSV with a sensor-dimension header; a packed binary
variant exists so benchmark runs are not dominated by text parsing. Event
timestamps must be non-decreasing; disorder within 1 ms is repaired by a
stable sort (with a warning), anything worse is a hard error. Track files
record one row per line per snapshot.
"""

from __future__ import annotations

import heapq
import io
import math
import re
import warnings

import numpy as np

from .engine import LineSnap, TrackSnapshot

EVENT_HEADER_RE = re.compile(r"# evline v1 width=(\d+) height=(\d+)\s*$")
TRACK_HEADER = "# evtrack v1"
BINARY_MAGIC = b"EVL1"
DISORDER_TOLERANCE_US = 1000

_BIN_DTYPE = np.dtype({"names": ["t", "x", "y", "p"],
                       "formats": ["<u8", "<u2", "<u2", "u1"],
                       "offsets": [0, 8, 10, 12],
                       "itemsize": 13})


class EventFileError(ValueError):
    pass


def _parse_header(line: str):
    m = EVENT_HEADER_RE.match(line)
    if not m:
        raise EventFileError(
            "missing or malformed header; expected '# evline v1 width=W height=H'")
    return int(m.group(1)), int(m.group(2))


def iter_event_file(path):
    """Stream events from an ASCII file as (x, y, t_us, polarity) tuples.

    First yields the (width, height) pair, then events. Holds only the
    reorder window in memory. Malformed records and out-of-bounds
    coordinates are reported with their line number; timestamps running
    backwards by more than the tolerance are a hard error.
    """
    with open(path, "r", encoding="ascii") as fh:
        width, height = _parse_header(fh.readline())
        yield (width, height)
        heap: list = []
        max_t = None
        warned = False
        seq = 0
        for lineno, line in enumerate(fh, 2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise EventFileError(f"line {lineno}: expected t,x,y,p")
            try:
                t = int(parts[0])
                x = int(parts[1])
                y = int(parts[2])
                p = int(parts[3])
            except ValueError:
                raise EventFileError(f"line {lineno}: non-integer field") from None
            if not 0 <= x < width:
                raise EventFileError(f"line {lineno}: x={x} outside [0, {width})")
            if not 0 <= y < height:
                raise EventFileError(f"line {lineno}: y={y} outside [0, {height})")
            if p not in (0, 1):
                raise EventFileError(f"line {lineno}: polarity must be 0 or 1")
            if max_t is not None and t < max_t:
                if max_t - t > DISORDER_TOLERANCE_US:
                    raise EventFileError(
                        f"line {lineno}: timestamp {t} precedes the stream by "
                        f"{max_t - t} us (tolerance {DISORDER_TOLERANCE_US})")
                if not warned:
                    warnings.warn(f"{path}: timestamps disordered near line "
                                  f"{lineno}; repairing within "
                                  f"{DISORDER_TOLERANCE_US} us", stacklevel=2)
                    warned = True
            if max_t is None or t > max_t:
                max_t = t
            heapq.heappush(heap, (t, seq, x, y, p))
            seq += 1
            release = max_t - DISORDER_TOLERANCE_US
            while heap and heap[0][0] <= release:
                rt, _, rx, ry, rp = heapq.heappop(heap)
                yield (rx, ry, rt, rp)
        while heap:
            rt, _, rx, ry, rp = heapq.heappop(heap)
            yield (rx, ry, rt, rp)


def load_events(path):
    """Load a whole ASCII event file into an (N, 4) int64 array (x, y, t, p).

    Fast bulk path with the same validation semantics as iter_event_file;
    falls back to the streaming parser to diagnose the offending line when
    the bulk parse fails.
    """
    with open(path, "r", encoding="ascii") as fh:
        width, height = _parse_header(fh.readline())
        body = fh.read()
    if not body.strip():
        return np.empty((0, 4), dtype=np.int64), width, height
    raw = None
    # the fast path handles only plain comma-separated integers; anything
    # else (floats, stray text, ragged rows) goes through the streaming
    # parser, which reports the offending line
    if not re.search(r"[^0-9,\-\s]", body):
        try:
            raw = np.loadtxt(io.StringIO(body), delimiter=",",
                             dtype=np.int64, ndmin=2)
        except ValueError:
            raw = None
        if raw is not None and raw.shape[1] != 4:
            raw = None
    if raw is None:
        it = iter_event_file(path)
        next(it)
        rows = list(it)
        raw = np.array([(t, x, y, p) for x, y, t, p in rows],
                       dtype=np.int64).reshape(-1, 4)
        return raw[:, [1, 2, 0, 3]], width, height
    t, x, y, p = raw[:, 0], raw[:, 1], raw[:, 2], raw[:, 3]
    for name, col, hi in (("x", x, width), ("y", y, height)):
        bad = np.nonzero((col < 0) | (col >= hi))[0]
        if bad.size:
            i = int(bad[0])
            raise EventFileError(
                f"line {i + 2}: {name}={int(col[i])} outside [0, {hi})")
    bad = np.nonzero((p < 0) | (p > 1))[0]
    if bad.size:
        raise EventFileError(f"line {int(bad[0]) + 2}: polarity must be 0 or 1")
    if t.size > 1:
        running = np.maximum.accumulate(t)
        lag = running - t
        worst = int(lag.max())
        if worst > DISORDER_TOLERANCE_US:
            i = int(np.nonzero(lag > DISORDER_TOLERANCE_US)[0][0])
            raise EventFileError(
                f"line {i + 2}: timestamp {int(t[i])} precedes the stream by "
                f"{int(lag[i])} us (tolerance {DISORDER_TOLERANCE_US})")
        if worst > 0:
            warnings.warn(f"{path}: timestamps disordered; repairing within "
                          f"{DISORDER_TOLERANCE_US} us", stacklevel=2)
            order = np.argsort(t, kind="stable")
            t, x, y, p = t[order], x[order], y[order], p[order]
    return np.column_stack((x, y, t, p)), width, height


def write_event_file(path, events, width: int, height: int) -> None:
    """Serialize events ((N, 4) array or iterable of (x, y, t, p)) to ASCII."""
    arr = np.asarray(events, dtype=np.int64).reshape(-1, 4)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# evline v1 width={width} height={height}\n")
        if arr.size:
            out = arr[:, [2, 0, 1, 3]]    # file order: t,x,y,p
            buf = io.StringIO()
            np.savetxt(buf, out, fmt="%d", delimiter=",")
            fh.write(buf.getvalue())


def write_event_file_binary(path, events, width: int, height: int) -> None:
    arr = np.asarray(events, dtype=np.int64).reshape(-1, 4)
    rec = np.empty(len(arr), dtype=_BIN_DTYPE)
    rec["t"] = arr[:, 2]
    rec["x"] = arr[:, 0]
    rec["y"] = arr[:, 1]
    rec["p"] = arr[:, 3]
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(np.array([width, height], dtype="<u2").tobytes())
        fh.write(rec.tobytes())


def load_events_binary(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BINARY_MAGIC:
            raise EventFileError(f"bad magic {magic!r}; expected {BINARY_MAGIC!r}")
        dims = np.frombuffer(fh.read(4), dtype="<u2")
        width, height = int(dims[0]), int(dims[1])
        payload = fh.read()
    if len(payload) % _BIN_DTYPE.itemsize:
        raise EventFileError("truncated binary event file")
    rec = np.frombuffer(payload, dtype=_BIN_DTYPE)
    arr = np.column_stack((rec["x"].astype(np.int64),
                           rec["y"].astype(np.int64),
                           rec["t"].astype(np.int64),
                           rec["p"].astype(np.int64)))
    return arr, width, height


def is_binary_event_file(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == BINARY_MAGIC


# -- track files -----------------------------------------------------------

def open_track_writer(path):
    fh = open(path, "w", encoding="ascii")
    fh.write(TRACK_HEADER + "\n")
    return fh


def append_snapshot(fh, snap: TrackSnapshot) -> None:
    t = snap.timestamp_us
    for s in snap.lines:
        fh.write(f"{t},{s.line_id},{s.state},{s.mid_x:.4f},{s.mid_y:.4f},"
                 f"{s.angle_deg:.4f},{s.length_px:.4f},{s.n_events}\n")


def write_track_file(path, snapshots) -> None:
    with open_track_writer(path) as fh:
        for snap in snapshots:
            append_snapshot(fh, snap)


def read_track_file(path) -> list[TrackSnapshot]:
    snaps: list[TrackSnapshot] = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != TRACK_HEADER:
            raise EventFileError(f"track file must start with {TRACK_HEADER!r}")
        current_t = None
        current: list[LineSnap] = []
        for lineno, line in enumerate(fh, 2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 8:
                raise EventFileError(f"line {lineno}: expected 8 fields")
            t = int(parts[0])
            snap_line = LineSnap(int(parts[1]), parts[2], float(parts[3]),
                                 float(parts[4]), float(parts[5]),
                                 float(parts[6]), int(parts[7]))
            if t != current_t:
                if current:
                    snaps.append(TrackSnapshot(current_t, current))
                current_t = t
                current = []
            current.append(snap_line)
        if current:
            snaps.append(TrackSnapshot(current_t, current))
    return snaps


# -- overlay rendering -----------------------------------------------------

STATE_COLORS = {
    "ACTIVE": (230, 50, 40),
    "HIBER": (235, 200, 40),
    "INIT": (150, 150, 150),
}


def render_overlay(snapshot: TrackSnapshot, width: int, height: int,
                   out_path, background=None, events=None, scale: int = 3):
    """Draw the snapshot's lines color-coded by state onto a raster image.

    background: optional path to an image to draw over (resized to the
    sensor); events: optional (N, 4) array scattered as dim points.
    """
    from PIL import Image, ImageDraw

    if background is not None:
        img = Image.open(background).convert("RGB").resize((width, height))
    else:
        img = Image.new("RGB", (width, height), (16, 16, 20))
    if events is not None and len(events):
        px = img.load()
        for x, y in np.asarray(events)[:, :2]:
            px[int(x), int(y)] = (90, 90, 95)
    img = img.resize((width * scale, height * scale), Image.NEAREST)
    draw = ImageDraw.Draw(img)
    for s in snapshot.lines:
        color = STATE_COLORS.get(s.state, (200, 200, 200))
        rad = math.radians(s.angle_deg)
        dx = math.cos(rad)
        dy = math.sin(rad)
        half = s.length_px / 2.0
        x0 = (s.mid_x - dx * half) * scale
        y0 = (s.mid_y - dy * half) * scale
        x1 = (s.mid_x + dx * half) * scale
        y1 = (s.mid_y + dy * half) * scale
        draw.line((x0, y0, x1, y1), fill=color, width=2)
        draw.text((s.mid_x * scale + 4, s.mid_y * scale + 4),
                  str(s.line_id), fill=color)
    img.save(out_path)
    return out_path
