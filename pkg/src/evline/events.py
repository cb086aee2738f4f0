"""Event primitives and the Surface of Active Events (SAE).

Timestamps are integer microseconds throughout the package. The SAE mirrors a
grayscale image: one cell per pixel holding the newest event timestamp seen at
that pixel (a large negative sentinel for pixels that never fired), which is
what both the per-event filters and the chain-growth search read.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

# Polarity encoding: OFF = 0 (brightness decrease), ON = 1 (increase).
OFF = 0
ON = 1

#: SAE sentinel for "this pixel never fired". Large negative so that any age
#: test (t - newest >= threshold) passes and any recency test (newest >= t0)
#: fails, without special-casing.
NEVER = -(2 ** 62)


class BoundsError(ValueError):
    """Event coordinates outside the sensor area."""


class Event(NamedTuple):
    x: int
    y: int
    t: int          # microseconds
    polarity: int   # OFF or ON


class SurfaceOfActiveEvents:
    """Per-pixel newest-timestamp map with O(1) update and lookup.

    Backed by a flat row-major list so the tracker hot path can index it
    directly (``grid[y * width + x]``).
    """

    __slots__ = ("width", "height", "grid")

    def __init__(self, width: int, height: int):
        if width <= 0 or height <= 0:
            raise ValueError(f"bad sensor size {width}x{height}")
        self.width = width
        self.height = height
        self.grid = [NEVER] * (width * height)

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def update(self, x: int, y: int, t: int) -> None:
        """Record an event firing; keeps the max timestamp per pixel."""
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise BoundsError(f"event at ({x},{y}) outside {self.width}x{self.height}")
        i = y * self.width + x
        if t > self.grid[i]:
            self.grid[i] = t

    def newest_at(self, x: int, y: int) -> int:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise BoundsError(f"pixel ({x},{y}) outside {self.width}x{self.height}")
        return self.grid[y * self.width + x]

    def query_window(self, cx: int, cy: int, half_extent: int, min_t: int) -> int:
        """Count window pixels (center excluded) with newest timestamp >= min_t.

        The window is clipped at the sensor borders.
        """
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise BoundsError(f"pixel ({cx},{cy}) outside {self.width}x{self.height}")
        w = self.width
        g = self.grid
        x0 = cx - half_extent
        x1 = cx + half_extent
        if x0 < 0:
            x0 = 0
        if x1 >= w:
            x1 = w - 1
        y0 = cy - half_extent
        y1 = cy + half_extent
        if y0 < 0:
            y0 = 0
        if y1 >= self.height:
            y1 = self.height - 1
        count = 0
        for y in range(y0, y1 + 1):
            base = y * w
            for x in range(x0, x1 + 1):
                if g[base + x] >= min_t and not (x == cx and y == cy):
                    count += 1
        return count

    def clear(self) -> None:
        self.grid = [NEVER] * (self.width * self.height)


@dataclass(frozen=True)
class TimeScale:
    """Conversion putting the time axis in pixel-commensurate units.

    The plane fit mixes pixel coordinates with time; ``pixels_per_millisecond``
    fixes the exchange rate so eigenvalue thresholds quoted in pixels stay
    meaningful. 1.0 keeps thresholds interpretable against the default
    parameter tables.
    """

    pixels_per_millisecond: float = 1.0

    def __post_init__(self):
        v = self.pixels_per_millisecond
        if not (v > 0.0 and math.isfinite(v)):
            raise ValueError(f"pixels_per_millisecond must be positive finite, got {v}")

    @property
    def per_us(self) -> float:
        """Scale factor applied to microsecond timestamps."""
        return self.pixels_per_millisecond / 1000.0
