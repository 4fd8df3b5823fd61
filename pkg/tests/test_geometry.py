import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sscontagion.geometry import (EdgeTables, GeometryError, compute_r_max, edge_weight,
                                  is_simple, point_in_polygon, points_in_polygon, polygon_metrics,
                                  summarize)
from sscontagion.rng import Stream
from sscontagion.synth import random_polygon

from .conftest import square


def ngon(n, radius, center=(0.0, 0.0)):
    th = 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)])


def rect(w, h):
    return np.array([(0, 0), (w, 0), (w, h), (0, h)], dtype=float)


def corner_fraction(a, b, r):
    """Inside fraction of a circle near the corner of the positive quadrant."""
    al = math.acos(min(a / r, 1.0))
    be = math.acos(min(b / r, 1.0))
    outside = 2 * al + 2 * be - max(0.0, al + be - math.pi / 2)
    return 1.0 - outside / (2 * math.pi)


class TestPolygonMetrics:
    def test_unit_square(self):
        s = polygon_metrics(square(1.0))
        assert s.area == 1.0
        assert s.bbox_aspect == 1.0
        assert s.max_chord == pytest.approx(math.sqrt(2), rel=1e-15)

    def test_rectangle(self):
        s = polygon_metrics(rect(400, 100))
        assert s.area == 40_000
        assert s.bbox_aspect == 4
        assert s.max_chord == pytest.approx(412.3105625617661, rel=1e-12)

    def test_ngon_area(self):
        s = polygon_metrics(ngon(64, 100.0))
        assert s.area == pytest.approx(math.pi * 100**2, rel=2e-3)
        # closed-form n-gon area
        assert s.area == pytest.approx(0.5 * 64 * 100**2 * math.sin(2 * math.pi / 64), rel=1e-12)

    def test_closing_vertex_is_ignored(self):
        ring = square(10.0)
        closed = np.vstack([ring, ring[:1]])
        assert polygon_metrics(closed) == polygon_metrics(ring)

    @pytest.mark.parametrize("bad", [
        [(0, 0), (1, 0)],
        [(0, 0), (1, 0), (2, 0)],
    ])
    def test_degenerate(self, bad):
        with pytest.raises(GeometryError):
            polygon_metrics(bad)


class TestRMax:
    def test_circle(self):
        s = summarize(ngon(64, 100.0))
        assert s.r_max == pytest.approx(100.0, rel=2e-3)
        assert s.r_eff == 0.9 * s.r_max

    def test_rectangle_uses_area_radius(self):
        s = summarize(rect(400, 100))
        assert s.r_max == pytest.approx(112.84, abs=0.01)

    def test_thin_strip(self):
        s = summarize(rect(1000, 20))
        assert s.r_max == pytest.approx(79.79, abs=0.01)
        assert 0.8 * s.max_chord == pytest.approx(800.2, abs=0.05)

    def test_elongated_short_chord_branch(self):
        # aspect > 1.5 but the chord branch is the smaller one
        ring = np.array([(0, 0), (10, 0), (10, 1), (0, 1)], dtype=float) * 1.0
        s = polygon_metrics(ring)
        assert compute_r_max(s) == min(s.r_c, 0.8 * s.max_chord)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 50.0))
    def test_scale_equivariance(self, seed, scale):
        ring = random_polygon(Stream(seed), 1.0e4)
        a = summarize(ring).r_max
        b = summarize(ring * scale).r_max
        assert b == pytest.approx(scale * a, rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 11), st.booleans())
    def test_area_invariant_to_rotation_and_orientation(self, seed, shift, reverse):
        ring = random_polygon(Stream(seed), 5.0e4)
        other = np.roll(ring, shift, axis=0)
        if reverse:
            other = other[::-1]
        a, b = polygon_metrics(ring), polygon_metrics(other)
        assert b.area == pytest.approx(a.area, rel=1e-12)
        assert b.max_chord == a.max_chord

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_summary_invariants(self, seed):
        s = summarize(random_polygon(Stream(seed), 3.0e5, n_vertices=9, jitter=0.5))
        assert s.r_c == math.sqrt(s.area / math.pi)
        assert s.r_eff == 0.9 * s.r_max
        assert s.r_max <= s.max_chord
        assert s.bbox_aspect >= 1.0


class TestPointInPolygon:
    def test_centroid(self):
        assert point_in_polygon(square(), (50, 50))

    def test_outside_bbox(self):
        assert not point_in_polygon(square(), (150, 50))

    @pytest.mark.parametrize("pt", [(0, 50), (100, 30), (40, 0), (60, 100), (0, 0), (100, 100)])
    def test_boundary_counts_inside(self, pt):
        assert point_in_polygon(square(), pt)

    def test_concave(self):
        ring = np.array([(0, 0), (10, 0), (10, 10), (5, 3), (0, 10)], dtype=float)
        assert point_in_polygon(ring, (2, 2))
        assert not point_in_polygon(ring, (5, 8))

    def test_vectorised_matches_scalar(self, rng):
        ring = random_polygon(Stream(4), 1.0e4)
        pts = rng.uniform(-80, 80, (300, 2))
        vec = points_in_polygon(ring, pts)
        assert list(vec) == [point_in_polygon(ring, p) for p in pts]


class TestSimple:
    def test_bowtie(self):
        assert not is_simple([(0, 0), (10, 10), (10, 0), (0, 10)])

    def test_square(self):
        assert is_simple(square())

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_random_polygons_are_simple(self, seed):
        assert is_simple(random_polygon(Stream(seed), 1.0e4))


class TestEdgeWeight:
    def test_interior(self):
        assert edge_weight(square(), (50, 50), 10) == 1.0

    def test_half_outside(self):
        assert edge_weight(square(), (50, 0), 10) == 2.0

    @pytest.mark.parametrize("a,b,r", [(0.1, 0.2, 0.3), (0.2, 0.2, 0.25), (0.05, 0.3, 0.35)])
    def test_corner_matches_arc_fraction(self, a, b, r):
        frac = 1.0 / edge_weight(square(1.0), (a, b), r)
        assert frac == pytest.approx(corner_fraction(a, b, r), abs=2.0 / 720)

    def test_outside_center(self):
        with pytest.raises(GeometryError):
            edge_weight(square(), (150, 50), 10)

    def test_non_positive_radius(self):
        with pytest.raises(GeometryError):
            edge_weight(square(), (50, 50), 0.0)

    def test_cap(self):
        # a sliver of the circle inside a narrow wedge hits the cap
        ring = np.array([(0, 0), (100, 0), (100, 1)], dtype=float)
        assert edge_weight(ring, (99.9, 0.5), 50) == 10.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 0.99), st.floats(0.01, 0.99),
           st.floats(1.0, 200.0))
    def test_at_least_one_and_one_at_small_radius(self, seed, u, v, radius):
        ring = random_polygon(Stream(seed), 1.0e4)
        lo, hi = ring.min(axis=0), ring.max(axis=0)
        c = lo + np.array([u, v]) * (hi - lo)
        if not point_in_polygon(ring, c):
            return
        assert edge_weight(ring, c, radius) >= 1.0
        # distance from c to the boundary bounds the fully interior radius
        a, b = ring, np.roll(ring, -1, axis=0)
        ab = b - a
        t = np.clip(np.einsum("ij,ij->i", c - a, ab) / np.einsum("ij,ij->i", ab, ab), 0, 1)
        gap = np.min(np.hypot(*(a + t[:, None] * ab - c).T))
        if gap > 1e-6:
            assert edge_weight(ring, c, 0.5 * gap) == 1.0


class TestEdgeTables:
    def test_lookup_matches_direct_weight(self, rng):
        ring = random_polygon(Stream(9), 2.0e4)
        inside = rng.uniform(-80, 80, (400, 2))
        centers = inside[points_in_polygon(ring, inside)][:25]
        tables = EdgeTables(ring, centers, 90.0, n_buckets=37)
        for row, c in enumerate(centers):
            for radius in rng.uniform(0.5, 90.0, 6):
                assert tables.weight(row, radius) == edge_weight(ring, c, radius)

    def test_buckets_are_consistent(self, rng):
        ring = random_polygon(Stream(2), 2.0e4)
        pts = rng.uniform(-80, 80, (200, 2))
        centers = pts[points_in_polygon(ring, pts)][:20]
        t = EdgeTables(ring, centers, 100.0, n_buckets=50)
        for row in range(len(centers)):
            lo, hi = t.offsets[row], t.offsets[row + 1]
            for q in range(50):
                for d in np.linspace(q * t.h, (q + 1) * t.h, 7)[:-1]:
                    if int(d / t.h) != q:
                        continue
                    k = t.bidx[row, q]
                    assert lo <= k <= hi
                    assert k == lo or t.dist[k - 1] < d
                    if t.bw[row, q] >= 0:
                        assert t.bw[row, q] == t.wtab[t.inside_count(row, d)]
