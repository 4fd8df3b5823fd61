"""Spatio-temporal and cross-type K/L estimators.

Two estimators are provided:

* the full spatio-temporal form, counting forward pairs with
  ``0 < dt <= tau`` and ``d <= r``, reported on ``K / tau`` so the L
  transform is centered at zero under complete spatio-temporal randomness;
* the year-pair cross-type form (prior cohort -> new cohort), which is the
  curve consumed by every contagion metric.

Pair sums are accumulated in fixed point by :mod:`sscontagion.kernels`, so
results do not depend on event order or on the backend. The brute-force
functions :func:`pairwise_forward_counts` and :func:`pairwise_cross_counts`
are kept as oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .domain import CohortPair, Community
from .geometry import N_ANGLES, WEIGHT_CAP, EdgeTables

DEFAULT_STEP = 10.0


@dataclass(frozen=True, eq=False)
class DistanceGrid:
    """Evaluation distances ``step, 2*step, ..., floor(r_eff/step)*step``."""

    r_values: np.ndarray
    step: float = DEFAULT_STEP

    def __post_init__(self):
        r = np.array(self.r_values, dtype=np.float64)
        if r.ndim != 1 or len(r) == 0:
            raise ValueError("distance grid must be a non-empty 1-D sequence")
        if np.any(np.diff(r) <= 0) or r[0] <= 0:
            raise ValueError("distance grid must be positive and strictly increasing")
        r.setflags(write=False)
        object.__setattr__(self, "r_values", r)

    @classmethod
    def up_to(cls, r_eff: float, step: float = DEFAULT_STEP) -> "DistanceGrid":
        if not step > 0:
            raise ValueError("grid step must be positive")
        n = int(math.floor(r_eff / step + 1e-9))
        if n < 1:
            raise ValueError(f"r_eff={r_eff:.3f} is shorter than one grid step ({step})")
        return cls(step * np.arange(1, n + 1, dtype=np.float64), float(step))

    def __len__(self):
        return len(self.r_values)

    @property
    def r_min(self) -> float:
        return float(self.r_values[0])

    @property
    def r_max(self) -> float:
        return float(self.r_values[-1])

    def same_as(self, other: "DistanceGrid") -> bool:
        return np.array_equal(self.r_values, other.r_values)


@dataclass(frozen=True, eq=False)
class LCurve:
    grid: DistanceGrid
    values: np.ndarray
    n_prior: int
    n_new: int
    year_pair: tuple[int, int] | None = None
    tau: float | None = None

    @property
    def is_full_pattern(self) -> bool:
        return self.year_pair is None


def build_edge_tables(community: Community, grid: DistanceGrid, *, n_angles=N_ANGLES,
                      cap=WEIGHT_CAP) -> EdgeTables:
    """Edge-correction tables centered on every event of ``community``."""
    return EdgeTables(community.ring, community.xy, grid.r_max, n_angles=n_angles, cap=cap)


# ---------------------------------------------------------------- oracles

def pairwise_forward_counts(events, r: float, tau: float) -> int:
    """Ordered pairs with ``0 < t_j - t_i <= tau`` and distance ``<= r``.

    ``events`` is a sequence of ``(x, y, t)`` triples or of objects with
    ``location`` and ``year``. Deliberately O(n^2) and loop-based.
    """
    pts = [_xyt(e) for e in events]
    count = 0
    for xi, yi, ti in pts:
        for xj, yj, tj in pts:
            dt = tj - ti
            if dt > 0 and dt <= tau:
                dx = xj - xi
                dy = yj - yi
                if math.sqrt(dx * dx + dy * dy) <= r:
                    count += 1
    return count


def pairwise_cross_counts(prior_xy, new_xy, r: float) -> int:
    """Pairs (prior i, new j) with distance ``<= r``; O(n1 * n2) loops."""
    count = 0
    for xi, yi in np.asarray(prior_xy, dtype=float).reshape(-1, 2).tolist():
        for xj, yj in np.asarray(new_xy, dtype=float).reshape(-1, 2).tolist():
            dx = xj - xi
            dy = yj - yi
            if math.sqrt(dx * dx + dy * dy) <= r:
                count += 1
    return count


def _xyt(e):
    if hasattr(e, "location"):
        return float(e.location[0]), float(e.location[1]), float(e.year)
    x, y, t = e
    return float(x), float(y), float(t)


# ------------------------------------------------------------- estimators

def _cumulative(hist: np.ndarray) -> np.ndarray:
    """Fixed-point bin histogram -> cumulative weighted pair count."""
    return np.cumsum(hist, axis=-1).astype(np.float64) / kernels.SCALE


def k_from_arrays(xy, t, ring, area, grid: DistanceGrid, tau: float, span: float, *,
                  tables: EdgeTables | None = None, rows=None,
                  temporal_correction: bool = False) -> np.ndarray:
    """Full spatio-temporal K on raw arrays; see :func:`k_function`."""
    xy = np.ascontiguousarray(xy, dtype=np.float64).reshape(-1, 2)
    t = np.ascontiguousarray(t, dtype=np.float64)
    n = len(xy)
    if n < 2:
        raise ValueError(f"K is undefined for n={n} < 2 events")
    if not span > 0:
        raise ValueError("temporal span must be positive")
    if temporal_correction and not tau < span:
        raise ValueError("temporal correction needs tau < span")
    weighted = tables is not None
    if weighted:
        rows = np.arange(n) if rows is None else np.asarray(rows)
        packed = tables.packed
        n_angles, cap = tables.n_angles, tables.cap
    else:
        rows = np.arange(n)
        packed, n_angles, cap = None, N_ANGLES, WEIGHT_CAP
    hist = kernels.forward_hist(xy, t, np.ascontiguousarray(rows, dtype=np.int64), packed,
                                float(tau), grid.r_values, int(n_angles), float(cap),
                                float(span), weighted, bool(temporal_correction))
    factor = area * span / (n * n)
    return factor * _cumulative(hist)


def k_function(community: Community, grid: DistanceGrid, tau: float, *, span: float | None = None,
               edge_correction: bool = True, tables: EdgeTables | None = None,
               temporal_correction: bool = False) -> np.ndarray:
    """Spatio-temporal K(r, tau) at every grid distance.

    Parameters
    ----------
    community : Community
    grid : DistanceGrid
    tau : float
        Maximum forward time lag in years.
    span : float, optional
        Length of the study period ``|T|``. Defaults to the range of the
        community's event years.
    edge_correction : bool
        Weight each pair by the isotropic edge weight centered on the
        earlier event. With ``False`` all weights are 1 and the result equals
        ``area * span / n**2 * pairwise_forward_counts`` exactly.
    tables : EdgeTables, optional
        Precomputed tables centered on the community's events.
    temporal_correction : bool
        Additionally weight pairs by ``span / (span - dt)`` to undo the
        truncation of forward windows near the end of the study period.

    Returns
    -------
    numpy.ndarray
        K values, non-decreasing in ``r``.
    """
    if span is None:
        span = float(community.years.max() - community.years.min()) if len(community) else 0.0
    if edge_correction and tables is None:
        tables = build_edge_tables(community, grid)
    return k_from_arrays(community.xy, community.years, community.ring, community.built_area,
                         grid, tau, span, tables=tables if edge_correction else None,
                         temporal_correction=temporal_correction)


def l_function(k_values, grid: DistanceGrid, tau: float | None = None, *, n_prior: int = 0,
               n_new: int = 0, year_pair=None) -> LCurve:
    """``L = sqrt(K / pi) - r``; with ``tau`` the transform is applied to ``K / tau``."""
    k = np.asarray(k_values, dtype=np.float64)
    if k.shape[-1] != len(grid):
        raise ValueError("K values and grid differ in length")
    if np.any(k < 0):
        raise ValueError("K values must be non-negative")
    kt = k / tau if tau is not None else k
    values = np.sqrt(kt / np.pi) - grid.r_values
    return LCurve(grid, values, n_prior, n_new, year_pair, tau)


def cross_k_counts(prior_xy, new_xy, grid: DistanceGrid, *, tables: EdgeTables | None = None,
                   prior_rows=None) -> np.ndarray:
    """Cumulative weighted prior->new pair counts.

    ``new_xy`` may be ``(n_new, 2)`` or a stack ``(S, n_new, 2)`` of
    simulated cohorts; the result is ``(len(grid),)`` or ``(S, len(grid))``.
    """
    prior_xy = np.ascontiguousarray(prior_xy, dtype=np.float64).reshape(-1, 2)
    new_xy = np.asarray(new_xy, dtype=np.float64)
    single = new_xy.ndim == 2
    stack = np.ascontiguousarray(new_xy.reshape(1, -1, 2) if single else new_xy)
    if tables is not None:
        rows = np.arange(len(prior_xy)) if prior_rows is None else prior_rows
        hist = kernels.cross_hist(prior_xy, np.ascontiguousarray(rows, dtype=np.int64),
                                  tables.packed, stack, grid.r_values, tables.wtab, True)
    else:
        hist = kernels.cross_hist(prior_xy, np.zeros(len(prior_xy), dtype=np.int64), None,
                                  stack, grid.r_values, np.zeros(1, dtype=np.int64), False)
    out = _cumulative(hist)
    return out[0] if single else out


def cross_k(prior_xy, new_xy, area: float, grid: DistanceGrid, *, tables=None,
            prior_rows=None) -> np.ndarray:
    """Cross-type ``K12(r) = area / (n1 * n2) * sum w_ij I(d_ij <= r)``."""
    n1 = len(np.asarray(prior_xy).reshape(-1, 2))
    n2 = np.asarray(new_xy).shape[-2]
    if n1 == 0 or n2 == 0:
        raise ValueError("cross-type K needs at least one prior and one new event")
    factor = area / (n1 * n2)
    return factor * cross_k_counts(prior_xy, new_xy, grid, tables=tables, prior_rows=prior_rows)


def cross_l_year_pair(community: Community, cohort: CohortPair, grid: DistanceGrid, *,
                      tables: EdgeTables | None = None,
                      edge_correction: bool = True) -> LCurve | None:
    """Cross-type L curve of the new cohort around the prior cohort.

    Returns ``None`` when either cohort side is empty. ``tables`` must be
    centered on the community's events (as built by
    :func:`build_edge_tables`); rows are taken from ``cohort.prior_idx``.
    """
    if len(cohort.prior) == 0 or len(cohort.new) == 0:
        return None
    if edge_correction and tables is None:
        tables = build_edge_tables(community, grid)
    k = cross_k(cohort.prior_xy, cohort.new_xy, community.built_area, grid,
                tables=tables if edge_correction else None, prior_rows=cohort.prior_idx)
    return l_function(k, grid, n_prior=len(cohort.prior), n_new=len(cohort.new),
                      year_pair=(cohort.t, cohort.t_prime))
