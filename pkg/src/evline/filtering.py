"""Two-stage per-event gate: refractory suppression, then neighborhood support.

Stage 1 suppresses an event if its pixel fired too recently: within 8 ms for a
same-polarity predecessor, 1 ms for an opposite-polarity one. Stage 2 requires
at least three other pixels in the surrounding 5x5 window to have fired within
the last 70 ms. Both stages read SAEs; the incoming event's timestamp is
written back whether or not it passes (a suppressed firing still restarts the
refractory clock - configurable via ``update_sae_on_suppressed``).

Support is counted per *pixel* (the SAE keeps only the newest timestamp per
pixel), a deliberate approximation of counting raw events in the volume.
"""

from __future__ import annotations

from dataclasses import dataclass

from .events import NEVER, BoundsError, Event, SurfaceOfActiveEvents


@dataclass
class FilterConfig:
    refractory_same_us: int = 8_000
    refractory_opposite_us: int = 1_000
    neighborhood_half_extent: int = 2       # 5x5 window
    neighborhood_age_us: int = 70_000
    neighborhood_min_support: int = 3
    update_sae_on_suppressed: bool = True

    def __post_init__(self):
        if self.refractory_same_us <= 0 or self.refractory_opposite_us <= 0:
            raise ValueError("refractory periods must be positive")
        if self.neighborhood_age_us <= 0:
            raise ValueError("neighborhood age must be positive")
        if self.neighborhood_min_support < 1:
            raise ValueError("neighborhood support must be >= 1")
        if self.neighborhood_half_extent < 1:
            raise ValueError("neighborhood half extent must be >= 1")


def refractory_pass(e: Event, sae_same: SurfaceOfActiveEvents,
                    sae_opposite: SurfaceOfActiveEvents, cfg: FilterConfig) -> bool:
    """True if the pixel's refractory periods have elapsed (>= semantics).

    Never-fired pixels pass: the SAE sentinel makes both ages enormous.
    """
    i = e.y * sae_same.width + e.x
    return (e.t - sae_same.grid[i] >= cfg.refractory_same_us
            and e.t - sae_opposite.grid[i] >= cfg.refractory_opposite_us)


def neighborhood_pass(e: Event, sae_merged: SurfaceOfActiveEvents,
                      cfg: FilterConfig) -> bool:
    """True if enough neighboring pixels fired recently around the event."""
    count = sae_merged.query_window(e.x, e.y, cfg.neighborhood_half_extent,
                                    e.t - cfg.neighborhood_age_us)
    return count >= cfg.neighborhood_min_support


class EventFilter:
    """Stateful filter owning the per-polarity and merged SAEs."""

    def __init__(self, width: int, height: int, cfg: FilterConfig | None = None):
        self.cfg = cfg or FilterConfig()
        self.width = width
        self.height = height
        self.sae_by_polarity = (SurfaceOfActiveEvents(width, height),
                                SurfaceOfActiveEvents(width, height))
        self.sae_merged = SurfaceOfActiveEvents(width, height)
        # Offsets for the interior fast path, center excluded.
        h = self.cfg.neighborhood_half_extent
        self._offsets = tuple(dy * width + dx
                              for dy in range(-h, h + 1)
                              for dx in range(-h, h + 1)
                              if dx or dy)

    def process(self, x: int, y: int, t: int, polarity: int) -> bool:
        """Run both stages for one event; update SAEs per config. True = pass."""
        w = self.width
        if not (0 <= x < w and 0 <= y < self.height):
            raise BoundsError(f"event at ({x},{y}) outside {w}x{self.height}")
        cfg = self.cfg
        i = y * w + x
        same = self.sae_by_polarity[polarity].grid
        opp = self.sae_by_polarity[1 - polarity].grid
        merged = self.sae_merged.grid

        ok = (t - same[i] >= cfg.refractory_same_us
              and t - opp[i] >= cfg.refractory_opposite_us)
        if ok:
            h = cfg.neighborhood_half_extent
            min_t = t - cfg.neighborhood_age_us
            need = cfg.neighborhood_min_support
            n = 0
            if h <= x < w - h and h <= y < self.height - h:
                for o in self._offsets:
                    if merged[i + o] >= min_t:
                        n += 1
                        if n >= need:
                            break
            else:
                n = self.sae_merged.query_window(x, y, h, min_t)
            ok = n >= need

        if ok or cfg.update_sae_on_suppressed:
            if t > same[i]:
                same[i] = t
            if t > merged[i]:
                merged[i] = t
        return ok

    def process_event(self, e: Event) -> bool:
        return self.process(e.x, e.y, e.t, e.polarity)


def reference_filter(events, width: int, height: int,
                     cfg: FilterConfig | None = None) -> list[bool]:
    """Naive O(N*W) filter over a raw event list; the equivalence oracle.

    Re-derives every decision from the raw history instead of SAEs: per-pixel
    last timestamps come from scanning prior events, neighborhood support from
    the per-pixel maxima of prior events in the window. Suppressed events still
    count as firings when ``update_sae_on_suppressed`` is set.
    """
    cfg = cfg or FilterConfig()
    decisions = []
    history: list[Event] = []   # events whose timestamps shape later decisions
    # With a time-sorted stream, history older than every window is inert: a
    # firing that old satisfies both refractory ages by itself (suppression
    # needs a strictly younger one, which is kept), and the support count
    # ignores it. Dropping it keeps every decision identical.
    horizon = max(cfg.neighborhood_age_us,
                  cfg.refractory_same_us, cfg.refractory_opposite_us)
    for e in events:
        if not (0 <= e.x < width and 0 <= e.y < height):
            raise BoundsError(f"event at ({e.x},{e.y}) outside {width}x{height}")
        min_keep = e.t - horizon
        if history and history[0].t < min_keep:
            history = [h for h in history if h.t >= min_keep]
        last_same = NEVER
        last_opp = NEVER
        for h in history:
            if h.x == e.x and h.y == e.y:
                if h.polarity == e.polarity:
                    last_same = max(last_same, h.t)
                else:
                    last_opp = max(last_opp, h.t)
        ok = (e.t - last_same >= cfg.refractory_same_us
              and e.t - last_opp >= cfg.refractory_opposite_us)
        if ok:
            he = cfg.neighborhood_half_extent
            min_t = e.t - cfg.neighborhood_age_us
            newest: dict[tuple[int, int], int] = {}
            for h in history:
                if (abs(h.x - e.x) <= he and abs(h.y - e.y) <= he
                        and not (h.x == e.x and h.y == e.y)):
                    key = (h.x, h.y)
                    if h.t > newest.get(key, NEVER):
                        newest[key] = h.t
            support = sum(1 for tv in newest.values() if tv >= min_t)
            ok = support >= cfg.neighborhood_min_support
        decisions.append(ok)
        if ok or cfg.update_sae_on_suppressed:
            history.append(e)
    return decisions
