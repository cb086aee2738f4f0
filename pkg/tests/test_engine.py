"""End-to-end cascade behavior of the streaming tracker.

These tests feed hand-built pixel rows: a steady cycle over ~100 adjacent
columns passes the refractory filter (per-pixel revisit 10 ms) and earns
neighborhood support after the first few milliseconds, so the stream walks
the whole pipeline: suppression warmup, chain-grown clusters, promotion,
initialization, activation, and the density-driven freeze.
"""

import time

from evline.config import TrackerConfig
from evline.engine import Disposition, Tracker
from evline.events import NEVER
from evline.lines import LineState, is_legal_transition_log


def row_stream(y, *, t0=0, duration_us=150_000, dt_us=100, x0=20,
               n_cols=100, polarity=1):
    """Events cycling over one pixel row with a coprime column stride."""
    out = []
    t, i = t0, 0
    while t < t0 + duration_us:
        out.append((x0 + (i * 97) % n_cols, y, t, polarity))
        i += 1
        t += dt_us
    return out


def interleave(*streams):
    return sorted((e for s in streams for e in s), key=lambda e: e[2])


def feed(tracker, events):
    return [tracker.process_event(e) for e in events]


class TestCascade:
    def test_single_row_walks_every_stage(self):
        tr = Tracker(TrackerConfig())
        feed(tr, row_stream(80))
        c = tr.counts
        assert c[Disposition.SUPPRESSED] > 0          # filter warmup
        assert c[Disposition.UNASSIGNED] > 0          # pre-cluster trickle
        assert c[Disposition.NEW_CLUSTER] >= 1
        assert c[Disposition.CLUSTER] > 0
        assert c[Disposition.LINE] > c[Disposition.CLUSTER]
        assert sum(c.values()) == tr.events_processed == 1500

        assert len(tr.lines) == 1
        line = tr.lines[0]
        assert line.state is LineState.ACTIVE
        assert line.display_id == 1
        snap = tr.snapshot()
        (s,) = snap.lines
        assert s.state == "ACTIVE"
        assert abs(s.mid_y - 80.0) < 0.5
        assert abs(s.mid_x - 69.5) < 2.0              # row center 20..119
        assert min(s.angle_deg, 180.0 - s.angle_deg) < 1.0
        assert 85.0 < s.length_px < 105.0
        assert s.n_events == line.acc.n > 0

    def test_two_rows_two_lines_sorted_snapshot(self):
        tr = Tracker(TrackerConfig())
        a = row_stream(40, t0=0)
        b = row_stream(90, t0=50)
        feed(tr, interleave(a, b))
        snap = tr.snapshot()
        assert [s.line_id for s in snap.lines] == [1, 2]
        assert sorted(round(s.mid_y) for s in snap.lines) == [40, 90]
        for s in snap.lines:
            assert s.state == "ACTIVE"

    def test_out_of_bounds_is_counted_not_raised(self):
        cfg = TrackerConfig()
        tr = Tracker(cfg)
        for e in [(cfg.width, 0, 1_000, 1), (-1, 5, 2_000, 1),
                  (0, cfg.height, 3_000, 0)]:
            assert tr.process_event(e) == (Disposition.OUT_OF_BOUNDS, None)
        assert tr.counts[Disposition.OUT_OF_BOUNDS] == 3

    def test_line_disposition_reports_the_line_id(self):
        tr = Tracker(TrackerConfig())
        feed(tr, row_stream(80))
        disp, lid = tr.process_event((60, 80, 150_000, 1))
        assert disp is Disposition.LINE
        assert lid == tr.lines[0].display_id == 1


class TestDeterminism:
    def test_same_stream_same_story(self):
        events = interleave(row_stream(40), row_stream(90, t0=50))
        runs = []
        for _ in range(2):
            tr = Tracker(TrackerConfig(), deterministic=True)
            dispositions = feed(tr, events)
            runs.append((dispositions, tr.disposition_counts(),
                         tr.snapshot(200_000)))
        assert runs[0][0] == runs[1][0]
        assert runs[0][1] == runs[1][1]
        assert runs[0][2].lines == runs[1][2].lines   # bit-identical floats


class TestMaintenance:
    def test_stream_gap_catches_up_boundary_by_boundary(self):
        """A long quiet gap must replay every skipped maintenance boundary.

        With per-boundary catch-up the line activates at its 110 ms deadline
        and, the stream long dark by then, freezes in the same pass; a single
        late pass would instead activate it at the far event's time. The
        transition log tells the two apart.
        """
        tr = Tracker(TrackerConfig())
        feed(tr, row_stream(80, duration_us=60_000))
        tr.process_event((200, 200, 500_000, 1))
        assert len(tr.lines) == 1
        line = tr.lines[0]
        assert line.state is LineState.HIBERNATED
        assert line.transitions[-2:] == [(110_000, "ACTIVE"),
                                         (110_000, "HIBER")]
        assert line.acc.n > 100                       # frozen, not cleaned

    def test_maintenance_is_idempotent_per_timestamp(self):
        tr = Tracker(TrackerConfig())
        feed(tr, row_stream(80, duration_us=60_000))
        tr.process_event((200, 200, 500_000, 1))
        line = tr.lines[0]
        before = list(line.transitions)
        report = tr.run_maintenance(500_000)
        assert report["lines_deleted"] == 0
        assert line.transitions == before

    def test_finish_runs_a_pass_at_stream_time(self):
        tr = Tracker(TrackerConfig())
        feed(tr, row_stream(80, duration_us=95_000))
        # stream ended mid-interval: the provisional line is still waiting
        tr.finish()
        assert tr._last_maintenance_us == tr.stream_time_us

    def test_promotion_can_be_deferred_to_maintenance(self):
        cfg = TrackerConfig(promote_in_maintenance=True)
        tr = Tracker(cfg)
        feed(tr, row_stream(80))
        assert tr.lines
        for L in tr.all_lines():
            assert L.created_us % cfg.maintenance_interval_us == 0


class TestNoHibernation:
    def test_lines_die_instead_of_parking(self):
        cfg = TrackerConfig(hibernation_enabled=False)
        tr = Tracker(cfg)
        feed(tr, row_stream(80, duration_us=130_000))
        assert any(L.state is LineState.ACTIVE for L in tr.lines)
        tr.process_event((200, 200, 600_000, 1))      # long quiet gap
        assert tr.lines == []
        dead = [L for L in tr.dead_lines if L.id > 0]
        assert dead and dead[0].delete_reason == "too_few_events"
        for L in tr.all_lines():
            assert all(s != "HIBER" for _, s in L.transitions)
            assert is_legal_transition_log(L.transitions)

    def test_merged_polarity_collapses_the_streams(self):
        cfg = TrackerConfig(hibernation_enabled=False, polarity_mode="merged")
        tr = Tracker(cfg)
        events = [(x, y, t, i % 2) for i, (x, y, t, _) in
                  enumerate(row_stream(80))]
        feed(tr, events)
        # everything lands on the ON side; the OFF surface stays virgin
        assert all(v == NEVER for v in tr.sae_unassigned[0].grid)
        assert all(c.polarity == 1 for c in tr.clusters)
        assert len(tr.lines) == 1


class TestInstrumentation:
    def test_per_stage_accounting_is_consistent(self):
        tr = Tracker(TrackerConfig(), instrumented=True)
        n = len(feed(tr, row_stream(80, duration_us=50_000)))
        out = tr.instrument()
        assert out["rows"]
        assert sum(r["events"] for r in out["rows"]) == n
        for r in out["rows"]:
            assert r["filter_events"] == r["events"]
            assert r["line_add_events"] <= r["events"]
            assert r["cluster_add_events"] <= r["line_add_events"]
            assert r["chain_events"] <= r["cluster_add_events"]
        assert set(out["means"]) == {"filter_ns", "line_add_ns",
                                     "cluster_add_ns", "chain_ns"}
        tr.instrument_reset()
        assert tr.instrument()["rows"] == []

    def test_uninstrumented_tracker_refuses(self):
        tr = Tracker(TrackerConfig())
        try:
            tr.instrument()
        except RuntimeError:
            pass
        else:
            raise AssertionError("expected RuntimeError")


class TestTwoContext:
    def test_background_maintenance_smoke(self):
        with Tracker(TrackerConfig(), deterministic=False) as tr:
            for chunk_start in range(0, 150_000, 30_000):
                feed(tr, row_stream(80, t0=chunk_start, duration_us=30_000))
                time.sleep(0.005)                     # let the thread observe
            time.sleep(0.02)
            assert sum(tr.counts.values()) == tr.events_processed
            snap = tr.snapshot()
            for s in snap.lines:
                assert s.state in ("INIT", "ACTIVE", "HIBER")
        tr.close()                                    # idempotent after exit
        for L in tr.all_lines():
            assert is_legal_transition_log(L.transitions + (
                [] if L.delete_reason else []))
