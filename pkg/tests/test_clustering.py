"""Chain growth, cluster membership, merging, and cluster maintenance."""

import math

import numpy as np
import pytest

from evline.clustering import (
    Cluster,
    ClusterAddResult,
    ClusterConfig,
    cluster_maintenance,
    grow_chain,
    try_add_to_cluster,
    try_create_cluster,
)
from evline.events import NEVER, SurfaceOfActiveEvents
from evline.geometry import EventAccumulator

SCALE = 1e-3
RING = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))


def sae_from(stamps, width=32, height=32):
    sae = SurfaceOfActiveEvents(width, height)
    for (x, y), t in stamps.items():
        sae.update(x, y, t)
    return sae


def chain_oracle(stamps, width, height, x0, y0, t0, cfg):
    """Contract restated: full ring on the first hop, then the three
    continuation neighbors before the two flanking ones; youngest eligible
    wins, raster order breaks ties; eligibility is aged against the seed."""
    cutoff = t0 - cfg.chain_seed_max_age_us
    chain = [(x0, y0, t0)]
    visited = {(x0, y0)}
    cx, cy = x0, y0
    last = None
    while len(chain) < cfg.chain_max_length:
        if last is None:
            groups = [list(RING)]
        else:
            i = RING.index(last)
            groups = [[RING[(i - 1) % 8], RING[i], RING[(i + 1) % 8]],
                      [RING[(i - 2) % 8], RING[(i + 2) % 8]]]
        pick = None
        for group in groups:
            found = []
            for sx, sy in group:
                nx, ny = cx + sx, cy + sy
                if not (0 <= nx < width and 0 <= ny < height):
                    continue
                if (nx, ny) in visited:
                    continue
                t = stamps.get((nx, ny), NEVER)
                if t < cutoff:
                    continue
                found.append((-t, ny, nx, (sx, sy)))
            if found:
                found.sort()
                pick = found[0]
                break
        if pick is None:
            break
        _, ny, nx, step = pick
        chain.append((nx, ny, stamps[(nx, ny)]))
        visited.add((nx, ny))
        cx, cy = nx, ny
        last = step
    return chain


class TestGrowChain:
    def test_isolated_seed_is_a_single_link(self):
        cfg = ClusterConfig()
        sae = sae_from({})
        assert grow_chain(sae, 5, 5, 1_000, cfg) == [(5, 5, 1_000)]

    def test_follows_a_straight_run(self):
        cfg = ClusterConfig()
        stamps = {(5 + i, 5): 1_000 + i for i in range(6)}
        sae = sae_from(stamps)
        chain = grow_chain(sae, 4, 5, 2_000, cfg)
        assert chain == [(4, 5, 2_000)] + [(5 + i, 5, 1_000 + i)
                                           for i in range(6)]

    def test_youngest_neighbor_wins(self):
        cfg = ClusterConfig()
        sae = sae_from({(6, 5): 900, (5, 6): 1_100})
        chain = grow_chain(sae, 5, 5, 2_000, cfg)
        assert chain[1] == (5, 6, 1_100)

    def test_tie_breaks_in_raster_order(self):
        cfg = ClusterConfig()
        sae = sae_from({(6, 5): 1_000, (4, 5): 1_000, (5, 4): 1_000})
        chain = grow_chain(sae, 5, 5, 2_000, cfg)
        assert chain[1] == (5, 4, 1_000)    # smallest y first

    def test_primary_pattern_shadows_younger_flank(self):
        """A continuation neighbor is taken even when a flanking one is
        younger: the extended pattern is consulted only on a dead end."""
        cfg = ClusterConfig()
        # walk arrives at (6,5) moving +x; (7,5) is primary, (6,7)... the
        # flanks for +x are (0,1)-rotated two ring steps: (0,1) and (0,-1)
        stamps = {(6, 5): 1_500, (7, 5): 800, (6, 6): 1_400}
        sae = sae_from(stamps)
        chain = grow_chain(sae, 5, 5, 2_000, cfg)
        assert chain[1] == (6, 5, 1_500)
        # next hop direction is +x; primary = {(7,4),(7,5),(7,6)} contains an
        # 800 even though the flank (6,6) holds 1_400
        assert chain[2] == (7, 5, 800)

    def test_age_cutoff_is_measured_from_the_seed(self):
        cfg = ClusterConfig()
        t0 = 500_000
        edge = t0 - cfg.chain_seed_max_age_us
        sae = sae_from({(6, 5): edge})
        assert len(grow_chain(sae, 5, 5, t0, cfg)) == 2
        sae = sae_from({(6, 5): edge - 1})
        assert len(grow_chain(sae, 5, 5, t0, cfg)) == 1

    def test_length_cap(self):
        cfg = ClusterConfig()
        stamps = {(2 + i, 5): 1_000 for i in range(30)}
        sae = sae_from(stamps)
        assert len(grow_chain(sae, 1, 5, 1_500, cfg)) == cfg.chain_max_length

    def test_never_revisits_a_pixel(self):
        cfg = ClusterConfig()
        stamps = {(x, y): 1_000 for x in range(4, 9) for y in range(4, 9)}
        sae = sae_from(stamps)
        chain = grow_chain(sae, 6, 6, 1_500, cfg)
        pixels = [(x, y) for x, y, _ in chain]
        assert len(pixels) == len(set(pixels))

    def test_matches_oracle_on_random_surfaces(self, rng):
        cfg = ClusterConfig()
        for _ in range(300):
            w = h = 16
            n = int(rng.integers(1, 60))
            stamps = {}
            for _ in range(n):
                stamps[(int(rng.integers(0, w)), int(rng.integers(0, h)))] = \
                    int(rng.integers(0, 200_000))
            sae = sae_from(stamps, w, h)
            x0 = int(rng.integers(0, w))
            y0 = int(rng.integers(0, h))
            t0 = int(rng.integers(100_000, 220_000))
            got = grow_chain(sae, x0, y0, t0, cfg)
            want = chain_oracle(stamps, w, h, x0, y0, t0, cfg)
            assert got == want


def make_cluster(points, ts=None, polarity=1, order=0, scale=SCALE):
    acc = EventAccumulator(scale)
    ts = ts or range(0, 1_000 * len(points), 1_000)
    for (x, y), t in zip(points, ts):
        acc.add(x, y, t)
    return Cluster(acc, polarity, acc.newest_t(), order)


class TestClusterCreation:
    def test_short_chain_is_refused(self):
        cfg = ClusterConfig()
        chain = [(i, 0, i * 100) for i in range(cfg.creation_num_events - 1)]
        assert try_create_cluster(chain, 1, 10_000, 0, SCALE, cfg) is None

    def test_chain_events_are_time_sorted_into_the_accumulator(self):
        cfg = ClusterConfig()
        chain = [(i, 0, t) for i, t in enumerate((500, 100, 900, 300, 700,
                                                  200, 400))]
        c = try_create_cluster(chain, 0, 10_000, 3, SCALE, cfg)
        assert c is not None
        assert c.acc.ts == sorted(c.acc.ts)
        assert c.polarity == 0
        assert c.order == 3

    def test_inferred_line_matches_numpy_pca(self, rng):
        pts = [(int(50 + i), int(40 + i + rng.integers(-1, 2)))
               for i in range(20)]
        c = make_cluster(pts)
        cx, cy, dx, dy, length = c.line
        arr = np.array(pts, float)
        assert (cx, cy) == pytest.approx(tuple(arr.mean(axis=0)), abs=1e-9)
        vals, vecs = np.linalg.eigh(np.cov(arr.T, ddof=1))
        major = vecs[:, 1]
        assert abs(dx * major[0] + dy * major[1]) == pytest.approx(1.0, abs=1e-9)
        assert length == pytest.approx(math.sqrt(12.0 * vals[1]), rel=1e-9)


class TestClusterMembership:
    def line_cluster(self, polarity=1, order=0):
        return make_cluster([(100 + i, 80) for i in range(20)],
                            polarity=polarity, order=order)

    def test_event_on_the_line_is_added(self):
        c = self.line_cluster()
        res, got, absorbed = try_add_to_cluster(
            110, 81, 30_000, 1, [c], ClusterConfig())
        assert res is ClusterAddResult.ADDED
        assert got is c and absorbed == ()
        assert c.count == 21

    def test_polarity_is_segregated(self):
        c = self.line_cluster(polarity=1)
        res, _, _ = try_add_to_cluster(110, 80, 30_000, 0, [c], ClusterConfig())
        assert res is ClusterAddResult.REJECTED

    def test_perpendicular_gate(self):
        # integer pixels cannot probe the 1.3 px threshold exactly; bracket it
        cfg = ClusterConfig()
        c = make_cluster([(100 + i, 80) for i in range(20)])
        cx, cy, dx, dy, length = c.line
        assert (cy, dy) == (80.0, 0.0)
        res, _, _ = try_add_to_cluster(110, 82, 30_000, 1, [c], cfg)   # a = 2.0
        assert res is ClusterAddResult.REJECTED
        res, _, _ = try_add_to_cluster(110, 81, 30_000, 1, [c], cfg)   # a = 1.0
        assert res is ClusterAddResult.ADDED

    def test_young_cluster_accepts_along_the_minimum_extent(self):
        # a tight chain has near-zero inferred length; the floor keeps the
        # along-line gate open out to 10 px
        c = make_cluster([(100, 80), (101, 80), (102, 80), (100, 81),
                          (101, 81), (102, 81), (101, 79)])
        assert c.line[4] < 4.0              # inferred length is tiny
        cfg = ClusterConfig()
        res, _, _ = try_add_to_cluster(109, 80, 30_000, 1, [c], cfg)
        assert res is ClusterAddResult.ADDED
        res, _, _ = try_add_to_cluster(113, 80, 30_000, 1, [c], cfg)
        assert res is ClusterAddResult.REJECTED

    def test_aligned_candidates_merge_into_the_oldest(self):
        cfg = ClusterConfig()
        a = make_cluster([(100 + i, 80) for i in range(20)], order=0)
        b = make_cluster([(105 + i, 81) for i in range(20)], order=1)
        res, got, absorbed = try_add_to_cluster(112, 80, 50_000, 1, [b, a], cfg)
        assert res is ClusterAddResult.MERGED
        assert got is a                     # older order wins
        assert absorbed == [b]
        assert a.count == 41                # 20 + 20 + the event

    def test_misaligned_candidates_fall_back_to_nearest(self):
        cfg = ClusterConfig()
        a = make_cluster([(100 + i, 80) for i in range(20)], order=0)
        # steep cluster crossing the event position, > 15 deg from a
        b = make_cluster([(111, 74 + i) for i in range(14)], order=1)
        res, got, absorbed = try_add_to_cluster(111, 81, 50_000, 1, [a, b], cfg)
        assert res is ClusterAddResult.ADDED
        assert absorbed == ()
        assert got is b                     # exactly on b's axis, 1 px off a


class TestClusterMaintenance:
    def test_cleanup_age_boundary(self):
        cfg = ClusterConfig()
        t_now = 100_000
        keep_t = t_now - cfg.cleanup_event_age_us       # exactly at the edge
        # fresh tail keeps the cluster out of the starvation rule, so only
        # the age cutoff decides who goes
        c = make_cluster([(100 + i, 80) for i in range(10)],
                         ts=[keep_t - 1] * 4 + [keep_t] * 4 + [99_000] * 2)
        survivors, deleted, removed = cluster_maintenance([c], t_now, cfg)
        assert survivors == [c] and deleted == []
        assert removed == 4
        assert c.count == 6

    def test_starved_cluster_is_deleted(self):
        cfg = ClusterConfig()
        c = make_cluster([(100 + i, 80) for i in range(10)],
                         ts=[0] * 10)
        # events young enough to survive cleanup but the cluster is silent
        t_now = cfg.deletion_no_events_us + 1
        assert t_now < cfg.cleanup_event_age_us
        survivors, deleted, _ = cluster_maintenance([c], t_now, cfg)
        assert survivors == [] and deleted == [c]

    def test_thinned_cluster_is_deleted(self):
        cfg = ClusterConfig()
        t_now = 200_000
        old = t_now - cfg.cleanup_event_age_us - 1
        c = make_cluster([(100 + i, 80) for i in range(10)],
                         ts=[old] * 8 + [t_now - 1_000] * 2)
        survivors, deleted, removed = cluster_maintenance([c], t_now, cfg)
        assert removed == 8
        assert deleted == [c]               # 2 < min_events_after_cleanup

    def test_surviving_cluster_line_is_refreshed(self):
        cfg = ClusterConfig()
        t_now = 200_000
        old = t_now - cfg.cleanup_event_age_us - 1
        pts = [(100 + i, 80) for i in range(10)] + [(140, 120 + i)
                                                    for i in range(8)]
        c = make_cluster(pts, ts=[old] * 10 + [t_now - 1_000] * 8)
        before = c.line
        survivors, _, _ = cluster_maintenance([c], t_now, cfg)
        assert survivors == [c]
        # only the vertical tail remains; the inferred line must have turned
        assert abs(c.line[3]) > 0.99
        assert c.line != before
