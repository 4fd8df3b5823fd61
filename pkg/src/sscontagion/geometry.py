"""Polygon geometry: area, analysis distances and edge-correction weights."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import pdist

from . import kernels

N_ANGLES = 720
WEIGHT_CAP = 10.0
COMPACT_ASPECT = 1.5
CHORD_FRACTION = 0.8
EFFECTIVE_FRACTION = 0.9


class GeometryError(ValueError):
    """Raised for degenerate or malformed polygons."""


@dataclass(frozen=True)
class GeometrySummary:
    area: float
    bbox_aspect: float
    max_chord: float
    r_c: float
    r_max: float | None = None
    r_eff: float | None = None


def as_ring(polygon) -> np.ndarray:
    """Return an ``(m, 2)`` float array of vertices without the closing repeat."""
    ring = np.asarray(polygon, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise GeometryError(f"polygon must be a sequence of (x, y) pairs, got shape {ring.shape}")
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        raise GeometryError(f"polygon needs at least 3 vertices, got {len(ring)}")
    if not np.all(np.isfinite(ring)):
        raise GeometryError("polygon has non-finite coordinates")
    return np.ascontiguousarray(ring)


def shoelace_area(ring) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def _orient(ax, ay, bx, by, cx, cy):
    return np.sign((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))


def is_simple(ring) -> bool:
    """True when no two non-adjacent edges touch or cross."""
    ring = as_ring(ring)
    m = len(ring)
    a = ring
    b = np.roll(ring, -1, axis=0)
    i, j = np.triu_indices(m, k=1)
    adjacent = (j == i + 1) | ((i == 0) & (j == m - 1))
    i, j = i[~adjacent], j[~adjacent]
    if len(i) == 0:
        return True
    p1x, p1y, p2x, p2y = a[i, 0], a[i, 1], b[i, 0], b[i, 1]
    q1x, q1y, q2x, q2y = a[j, 0], a[j, 1], b[j, 0], b[j, 1]
    o1 = _orient(p1x, p1y, p2x, p2y, q1x, q1y)
    o2 = _orient(p1x, p1y, p2x, p2y, q2x, q2y)
    o3 = _orient(q1x, q1y, q2x, q2y, p1x, p1y)
    o4 = _orient(q1x, q1y, q2x, q2y, p2x, p2y)
    proper = (o1 * o2 < 0) & (o3 * o4 < 0)

    def on_seg(px, py, qx, qy, rx, ry):
        return ((np.minimum(px, qx) <= rx) & (rx <= np.maximum(px, qx))
                & (np.minimum(py, qy) <= ry) & (ry <= np.maximum(py, qy)))

    touching = (
        ((o1 == 0) & on_seg(p1x, p1y, p2x, p2y, q1x, q1y))
        | ((o2 == 0) & on_seg(p1x, p1y, p2x, p2y, q2x, q2y))
        | ((o3 == 0) & on_seg(q1x, q1y, q2x, q2y, p1x, p1y))
        | ((o4 == 0) & on_seg(q1x, q1y, q2x, q2y, p2x, p2y))
    )
    return not bool(np.any(proper | touching))


def polygon_metrics(polygon) -> GeometrySummary:
    """Area (shoelace), bounding-box aspect and maximum vertex chord.

    ``r_max`` and ``r_eff`` are left unset; see :func:`compute_r_max`.
    """
    ring = as_ring(polygon)
    area = shoelace_area(ring)
    if not area > 0.0:
        raise GeometryError("polygon has zero area")
    w, h = np.ptp(ring[:, 0]), np.ptp(ring[:, 1])
    aspect = float(max(w, h) / min(w, h)) if min(w, h) > 0 else float("inf")
    chord = float(pdist(ring).max())
    return GeometrySummary(area=area, bbox_aspect=aspect, max_chord=chord,
                           r_c=float(np.sqrt(area / np.pi)))


def compute_r_max(summary: GeometrySummary) -> float:
    """Community maximum analysis distance.

    Compact windows (aspect <= 1.5) use the area-equivalent radius; elongated
    ones use ``min(r_c, 0.8 * max_chord)``.
    """
    if summary.bbox_aspect <= COMPACT_ASPECT:
        return summary.r_c
    return min(summary.r_c, CHORD_FRACTION * summary.max_chord)


def summarize(polygon) -> GeometrySummary:
    partial = polygon_metrics(polygon)
    r_max = compute_r_max(partial)
    return replace(partial, r_max=r_max, r_eff=EFFECTIVE_FRACTION * r_max)


def point_in_polygon(polygon, point) -> bool:
    """Ray-casting parity test; points on the boundary count as inside."""
    pts = np.asarray(point, dtype=np.float64).reshape(1, 2)
    return bool(kernels.points_in_polygon(as_ring(polygon), pts)[0])


def points_in_polygon(polygon, points) -> np.ndarray:
    return kernels.points_in_polygon(as_ring(polygon), np.asarray(points, dtype=np.float64).reshape(-1, 2))


def ray_angles(n_angles: int = N_ANGLES):
    # half-step offset keeps rays off the coordinate axes
    theta = (np.arange(n_angles) + 0.5) * (2.0 * np.pi / n_angles)
    return np.cos(theta), np.sin(theta)


class EdgeTables:
    """Per-center lookup tables for the isotropic edge-correction weight.

    For each center the circle of radius ``r`` is sampled at ``n_angles``
    equally spaced directions; the weight is ``n_angles / inside(r)``,
    capped at ``cap``. The inside count is a step function of ``r`` whose
    breakpoints are the ray/boundary crossings, so it is stored exactly and
    queried at arbitrary distances up to ``r_limit``.
    """

    def __init__(self, polygon, centers, r_limit, n_angles=N_ANGLES, cap=WEIGHT_CAP,
                 n_buckets=None):
        self.ring = as_ring(polygon)
        self.centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 2)
        self.r_limit = float(r_limit)
        self.n_angles = int(n_angles)
        self.cap = float(cap)
        cos_a, sin_a = ray_angles(self.n_angles)
        self.offsets, self.dist, self.inside, self.base = kernels.ray_tables(
            self.ring, self.centers, cos_a, sin_a, self.r_limit)
        k = np.arange(self.n_angles + 1, dtype=np.float64)
        with np.errstate(divide="ignore"):
            w = np.where(k > 0, np.minimum(self.n_angles / np.maximum(k, 1.0), self.cap), self.cap)
        # fixed-point weight per inside count
        self.wtab = np.floor(w * kernels.SCALE + 0.5).astype(np.int64)
        if n_buckets is None:
            n_buckets = int(np.clip(8_000_000 // max(1, len(self.centers)), 64, 4096))
        # Bucket q holds distances d with int(d / h) == q as computed in
        # floating point; the slack makes each bucket's breakpoint range a
        # superset of that set, so a bucket without breakpoints has one
        # exact weight and bidx[q] is always a safe scan start.
        self.h = max(self.r_limit, 1e-12) / n_buckets
        slack = 1e-9 * max(self.r_limit, 1.0)
        q = np.arange(n_buckets)
        lo_edge = q * self.h - slack
        hi_edge = (q + 1) * self.h + slack
        bidx = np.empty((len(self.centers), n_buckets), dtype=np.int64)
        bw = np.empty((len(self.centers), n_buckets), dtype=np.int64)
        for c in range(len(self.centers)):
            lo, hi = self.offsets[c], self.offsets[c + 1]
            seg = self.dist[lo:hi]
            start = np.searchsorted(seg, lo_edge, side="left")
            stop = np.searchsorted(seg, hi_edge, side="right")
            bidx[c] = lo + start
            inside_q = np.concatenate([[self.base[c]], self.inside[lo:hi]])[start]
            bw[c] = np.where(stop == start, self.wtab[inside_q], -1)
        self.bidx = bidx
        self.bw = bw

    @property
    def packed(self):
        return (self.offsets, self.dist, self.inside, self.base, self.bidx, self.h, self.bw)

    def inside_count(self, row: int, radius: float) -> int:
        lo, hi = self.offsets[row], self.offsets[row + 1]
        k = int(np.searchsorted(self.dist[lo:hi], radius, side="left"))
        return int(self.base[row]) if k == 0 else int(self.inside[lo + k - 1])

    def weight(self, row: int, radius: float) -> float:
        k = self.inside_count(row, radius)
        return self.cap if k == 0 else min(self.n_angles / k, self.cap)


def edge_weight(polygon, center, radius, n_angles=N_ANGLES, cap=WEIGHT_CAP) -> float:
    """Inverse of the fraction of the circle around ``center`` inside the polygon.

    Raises
    ------
    GeometryError
        If ``center`` is outside the polygon or ``radius`` is not positive.
    """
    if not radius > 0:
        raise GeometryError("radius must be positive")
    if not point_in_polygon(polygon, center):
        raise GeometryError(f"center {tuple(center)} lies outside the polygon")
    tables = EdgeTables(polygon, [center], r_limit=radius, n_angles=n_angles, cap=cap,
                        n_buckets=1)
    return tables.weight(0, radius)
