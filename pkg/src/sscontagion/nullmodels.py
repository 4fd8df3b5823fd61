"""Random-relabelling null model and simulation envelopes.

The null holds the prior cohort fixed and places the new cohort uniformly
in the community polygon. Simulation ``s`` of pair ``(t, t')`` draws from
the counter stream keyed by ``(seed, community_id, t, t', s)``, so any
single realization can be regenerated on its own and results never depend
on how simulations are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .domain import CohortPair, Community
from .estimator import DistanceGrid, LCurve, build_edge_tables, cross_k
from .geometry import EdgeTables
from .rng import derive_key, derive_keys

DEFAULT_SIMS = 1000
MIN_SIMS = 39
BUDGET_PER_POINT = 1000
POINTWISE_ALPHA = 0.05

ABOVE, WITHIN, BELOW = "above", "within", "below"


@dataclass(frozen=True, eq=False)
class EnvelopePair:
    grid: DistanceGrid
    upper: np.ndarray
    lower: np.ndarray
    n_sims: int
    seed: int
    kind: str  # "global" or "pointwise"

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def cohort_key(seed: int, community_id, t: int, t_prime: int) -> int:
    return derive_key(seed, community_id, t, t_prime)


def sim_keys(seed: int, community_id, t: int, t_prime: int, n_sims: int, start: int = 0) -> np.ndarray:
    base = cohort_key(seed, community_id, t, t_prime)
    return derive_keys(base, np.arange(start, start + n_sims, dtype=np.uint64))


def _bbox(ring):
    return (*ring.min(axis=0), *ring.max(axis=0))


def sample_new_cohorts(community: Community, cohort: CohortPair, seed: int, n_sims: int,
                       start: int = 0) -> np.ndarray:
    """Uniform relocations of the new cohort, shape ``(n_sims, n_new, 2)``.

    Raises
    ------
    SamplingBudgetError
        If rejection sampling needs more than ``1000 * n_new`` candidates.
    """
    n_new = len(cohort.new)
    keys = sim_keys(seed, community.id, cohort.t, cohort.t_prime, n_sims, start)
    ring = community.ring
    return kernels.sample_uniform(ring, _bbox(ring), keys, n_new,
                                  BUDGET_PER_POINT * max(n_new, 1))


def simulate_cstr(community: Community, cohort: CohortPair, rng_seed: int,
                  sim_index: int = 0) -> CohortPair:
    """One null realization: prior fixed, new cohort relocated uniformly."""
    if len(cohort.new) == 0:
        return cohort
    xy = sample_new_cohorts(community, cohort, rng_seed, 1, start=sim_index)[0]
    return cohort.replace_new(xy)


def simulated_l(community: Community, cohort: CohortPair, grid: DistanceGrid, n_sims: int,
                seed: int, tables: EdgeTables | None = None) -> np.ndarray:
    """Cross-type L values of ``n_sims`` null realizations, shape ``(n_sims, len(grid))``."""
    sims = sample_new_cohorts(community, cohort, seed, n_sims)
    k = cross_k(cohort.prior_xy, sims, community.built_area, grid, tables=tables,
                prior_rows=cohort.prior_idx)
    return np.sqrt(k / np.pi) - grid.r_values


def pointwise_rank(n_sims: int, alpha: float = POINTWISE_ALPHA) -> int:
    """Order statistic used for a two-sided pointwise envelope of level ``alpha``."""
    return max(1, int(np.floor(alpha / 2.0 * (n_sims + 1))))


def envelopes_from_sims(sim_values, grid: DistanceGrid, seed: int) -> tuple[EnvelopePair, EnvelopePair]:
    """Global (min/max) and pointwise (rank) envelopes from simulated curves."""
    sims = np.asarray(sim_values, dtype=np.float64)
    n = sims.shape[0]
    glob = EnvelopePair(grid, sims.max(axis=0), sims.min(axis=0), n, seed, "global")
    k = pointwise_rank(n)
    srt = np.sort(sims, axis=0)
    point = EnvelopePair(grid, srt[n - k], srt[k - 1], n, seed, "pointwise")
    return glob, point


def build_envelopes(community: Community, cohort: CohortPair, grid: DistanceGrid,
                    n_sims: int = DEFAULT_SIMS, seed: int = 0,
                    tables: EdgeTables | None = None, edge_correction: bool = True):
    """Global and pointwise envelopes for one cohort pair.

    Simulated curves are edge corrected exactly like the observed curve of
    :func:`~sscontagion.estimator.cross_l_year_pair` with the same
    ``tables`` and ``edge_correction`` arguments.

    Returns ``None`` when the cohort has an empty side (no observed curve);
    otherwise ``(global_envelope, pointwise_envelope)``.
    """
    if n_sims < MIN_SIMS:
        raise ValueError(f"n_sims={n_sims} is below the minimum of {MIN_SIMS}")
    if len(cohort.prior) == 0 or len(cohort.new) == 0:
        return None
    if not edge_correction:
        tables = None
    elif tables is None:
        tables = build_edge_tables(community, grid)
    sims = simulated_l(community, cohort, grid, n_sims, seed, tables)
    return envelopes_from_sims(sims, grid, seed)


def significance_flags(observed: LCurve, envelope: EnvelopePair) -> np.ndarray:
    """``"above"``/``"within"``/``"below"`` per grid point; bounds count as within."""
    if not observed.grid.same_as(envelope.grid):
        raise ValueError("observed curve and envelope are on different grids")
    v = observed.values
    out = np.full(len(v), WITHIN, dtype=object)
    out[v > envelope.upper] = ABOVE
    out[v < envelope.lower] = BELOW
    return out


__all__ = [
    "EnvelopePair",
    "build_envelopes",
    "envelopes_from_sims",
    "pointwise_rank",
    "sample_new_cohorts",
    "significance_flags",
    "simulate_cstr",
    "simulated_l",
]
