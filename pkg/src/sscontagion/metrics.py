"""Contagion metrics (CI, R, R*, HE), lag aggregation and adoption intensity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import Community
from .estimator import LCurve
from .nullmodels import EnvelopePair

HOUSEHOLD_CUTOFF = 25.0
MAX_LAG = 5
AI_SCALE = 1e6


class DegenerateEnvelopeError(ValueError):
    """The envelope has zero integrated width, so CI is undefined."""


@dataclass(frozen=True)
class SSCMetrics:
    community_id: str
    t: int
    t_prime: int
    ci: float = math.nan
    r_abs: float = math.nan
    r_rel: float = math.nan
    he: float = math.nan
    flags: tuple[str, ...] = ()

    @property
    def lag(self) -> int:
        return self.t_prime - self.t

    @property
    def valid(self) -> bool:
        return not math.isnan(self.ci)


@dataclass(frozen=True)
class AggregatedCI:
    per_lag: dict = field(default_factory=dict)
    mean: float = math.nan

    @property
    def missing(self) -> bool:
        return not self.per_lag


def _check(observed: LCurve, envelope: EnvelopePair):
    if not observed.grid.same_as(envelope.grid):
        raise ValueError("observed curve and envelope are on different grids")


def _band(r, lo, hi):
    mask = np.ones(len(r), dtype=bool)
    if lo is not None:
        mask &= r > lo
    if hi is not None:
        mask &= r <= hi
    return mask


def exceedance_ratio(values, upper, lower, r) -> float:
    """Trapezoid integral of ``max(L - L+, 0)`` over that of ``L+ - L-``.

    A single abscissa has no trapezoid; the pointwise ratio is used.
    """
    excess = np.maximum(np.asarray(values) - upper, 0.0)
    width = np.asarray(upper) - lower
    if len(r) == 0:
        return math.nan
    if len(r) == 1:
        num, den = float(excess[0]), float(width[0])
    else:
        num = float(np.trapezoid(excess, r))
        den = float(np.trapezoid(width, r))
    if not den > 0:
        raise DegenerateEnvelopeError("envelope has zero integrated width")
    return num / den


def ci_index(observed: LCurve, envelope: EnvelopePair, *, r_min: float | None = None,
             r_max: float | None = None) -> float:
    """Normalized area by which ``observed`` exceeds the upper envelope.

    Integrates over the whole grid by default; ``r_min`` (exclusive) and
    ``r_max`` (inclusive) restrict the band.

    Raises
    ------
    DegenerateEnvelopeError
        If the envelope has zero width over the band.
    """
    _check(observed, envelope)
    r = observed.grid.r_values
    m = _band(r, r_min, r_max)
    return exceedance_ratio(observed.values[m], envelope.upper[m], envelope.lower[m], r[m])


def he_index(observed: LCurve, envelope: EnvelopePair, cutoff: float = HOUSEHOLD_CUTOFF) -> float:
    """CI restricted to the within-household band ``r <= cutoff``."""
    if observed.grid.r_min > cutoff:
        raise ValueError(f"grid has no points at or below {cutoff} m")
    return ci_index(observed, envelope, r_max=cutoff)


def ssc_range(observed: LCurve, envelope: EnvelopePair, r_eff: float,
              within_household_cutoff: float = HOUSEHOLD_CUTOFF) -> tuple[float, float]:
    """Total grid measure where ``L > L+`` beyond the household cutoff.

    Returns ``(r_abs, r_rel)`` with ``r_rel = r_abs / r_eff`` clamped to
    ``[0, 1]``.
    """
    _check(observed, envelope)
    r = observed.grid.r_values
    hits = (observed.values > envelope.upper) & (r > within_household_cutoff)
    r_abs = observed.grid.step * int(np.count_nonzero(hits))
    r_rel = min(max(r_abs / r_eff, 0.0), 1.0)
    return float(r_abs), float(r_rel)


def exceedance_median_distance(observed: LCurve, envelope: EnvelopePair) -> float:
    """Distance at which the cumulative exceedance ``max(L - L+, 0)`` reaches half its total.

    ``nan`` when there is no exceedance. Useful for locating the scale of
    detected clustering.
    """
    _check(observed, envelope)
    r = observed.grid.r_values
    excess = np.maximum(observed.values - envelope.upper, 0.0)
    total = excess.sum()
    if not total > 0:
        return math.nan
    return float(r[np.searchsorted(np.cumsum(excess), 0.5 * total)])


def pair_metrics(community: Community, observed: LCurve | None,
                 envelope: EnvelopePair | None, t: int, t_prime: int) -> SSCMetrics:
    """All per-pair metrics, with a flag instead of values when data are missing."""
    if observed is None or envelope is None:
        return SSCMetrics(community.id, t, t_prime, flags=("empty_cohort",))
    try:
        ci = ci_index(observed, envelope)
    except DegenerateEnvelopeError:
        return SSCMetrics(community.id, t, t_prime, flags=("degenerate_envelope",))
    r_abs, r_rel = ssc_range(observed, envelope, community.r_eff)
    flags: tuple[str, ...] = ()
    try:
        he = he_index(observed, envelope)
    except (ValueError, DegenerateEnvelopeError):
        he = math.nan
        flags = ("he_undefined",)
    return SSCMetrics(community.id, t, t_prime, ci, r_abs, r_rel, he, flags)


def aggregate_by_lag(metrics: Iterable[SSCMetrics], attr: str = "ci",
                     max_lag: int = MAX_LAG) -> AggregatedCI:
    """Mean per calendar lag ``1..max_lag``, then the mean of the lag means.

    Missing values are skipped, never zero-filled; lags without data are
    left out of the community mean.
    """
    buckets: dict[int, list[float]] = {}
    for m in metrics:
        v = getattr(m, attr)
        if v is None or math.isnan(v) or not 1 <= m.lag <= max_lag:
            continue
        buckets.setdefault(m.lag, []).append(float(v))
    per_lag = {h: math.fsum(v) / len(v) for h, v in sorted(buckets.items())}
    mean = math.fsum(per_lag.values()) / len(per_lag) if per_lag else math.nan
    return AggregatedCI(per_lag, mean)


def aggregate_ci(metrics: Iterable[SSCMetrics], timeline=None) -> AggregatedCI:
    """Lag-specific and community-mean CI. ``timeline`` is accepted for symmetry."""
    return aggregate_by_lag(metrics, "ci")


def adoption_intensity(community: Community, year: int) -> float:
    """Cumulative panel area per built-up area, times 10^6."""
    if not community.built_area > 0:
        raise ValueError("built area must be positive")
    if not len(community):
        return 0.0
    pva = math.fsum(community.panel_area[community.years <= year])
    return pva * AI_SCALE / community.built_area


def adoption_series(community: Community, years: Sequence[int]) -> np.ndarray:
    return np.array([adoption_intensity(community, y) for y in years])


def ati_index(series: Mapping[str, Sequence[float]], years: Sequence[int]) -> dict[str, float]:
    """Time-integrated AI normalized by the regional mean of the same integral.

    Parameters
    ----------
    series : mapping
        Community id -> AI values at each of ``years``.
    years : sequence of int
        Snapshot years; AI is linear between them.

    Raises
    ------
    ValueError
        If fewer than two years are given, the region is empty, or the
        regional mean integral is zero.
    """
    years = np.asarray(years, dtype=np.float64)
    if len(years) < 2:
        raise ValueError("ATI needs at least two snapshot years")
    if not series:
        raise ValueError("ATI needs a non-empty region")
    raw = {cid: float(np.trapezoid(np.asarray(ai, dtype=np.float64), years))
           for cid, ai in series.items()}
    mean = math.fsum(raw.values()) / len(raw)
    if not mean > 0:
        raise ValueError("regional mean of integrated AI is zero")
    return {cid: v / mean for cid, v in raw.items()}


def delta_ai(ai_start: float, ai_end: float) -> float:
    """Relative AI change with 1 added to the baseline."""
    return (ai_end - ai_start) / (ai_start + 1.0)
