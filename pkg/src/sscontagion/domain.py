"""Core data types, dataset validation and year-pair cohorts."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from . import geometry
from .geometry import GeometryError

DEFAULT_YEARS = (2012, 2015, 2016, 2017, 2020, 2021, 2022)
MIN_EVENTS = 50


def _frozen(a) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PVInstallation:
    id: str
    location: tuple[float, float]
    year: int
    panel_area: float


@dataclass(frozen=True)
class Timeline:
    years: tuple[int, ...] = DEFAULT_YEARS

    def __post_init__(self):
        years = tuple(int(y) for y in self.years)
        if len(years) < 2:
            raise ValueError("a timeline needs at least two years")
        if any(b <= a for a, b in zip(years, years[1:])):
            raise ValueError(f"timeline years must be strictly increasing: {years}")
        object.__setattr__(self, "years", years)

    @property
    def span(self) -> int:
        return self.years[-1] - self.years[0]

    def __contains__(self, year) -> bool:
        return year in self.years

    def pairs(self):
        return list(combinations(self.years, 2))


@dataclass(frozen=True, eq=False)
class Community:
    """A bounded community polygon and its adoption events.

    Coordinate, year and panel-area arrays are derived once and read-only.
    """

    id: str
    polygon: np.ndarray
    events: tuple[PVInstallation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "polygon", _frozen(np.asarray(self.polygon, dtype=np.float64)))
        object.__setattr__(self, "events", tuple(self.events))

    @classmethod
    def from_arrays(cls, id, polygon, xy, years, panel_area, event_ids=None) -> "Community":
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        if event_ids is None:
            event_ids = [f"{id}-{i}" for i in range(len(xy))]
        events = tuple(
            PVInstallation(str(e), (float(x), float(y)), int(yr), float(a))
            for e, (x, y), yr, a in zip(event_ids, xy, years, panel_area)
        )
        return cls(str(id), polygon, events)

    @cached_property
    def ring(self) -> np.ndarray:
        return geometry.as_ring(self.polygon)

    @cached_property
    def geometry(self) -> geometry.GeometrySummary:
        return geometry.summarize(self.ring)

    @property
    def built_area(self) -> float:
        return self.geometry.area

    @property
    def r_max(self) -> float:
        return self.geometry.r_max

    @property
    def r_eff(self) -> float:
        return self.geometry.r_eff

    @cached_property
    def xy(self) -> np.ndarray:
        return _frozen(np.array([e.location for e in self.events], dtype=np.float64).reshape(-1, 2))

    @cached_property
    def years(self) -> np.ndarray:
        return _frozen(np.array([e.year for e in self.events], dtype=np.int64))

    @cached_property
    def panel_area(self) -> np.ndarray:
        return _frozen(np.array([e.panel_area for e in self.events], dtype=np.float64))

    def __len__(self):
        return len(self.events)

    def with_events(self, events: Iterable[PVInstallation]) -> "Community":
        return Community(self.id, self.polygon, tuple(events))


@dataclass(frozen=True, eq=False)
class CohortPair:
    """Prior (year <= t) and new (year == t') events for one ordered year pair.

    ``prior_idx`` and ``new_idx`` index the owning community's events.
    """

    t: int
    t_prime: int
    prior: tuple[PVInstallation, ...]
    new: tuple[PVInstallation, ...]
    prior_idx: np.ndarray
    new_idx: np.ndarray

    @property
    def lag_h(self) -> int:
        return self.t_prime - self.t

    @cached_property
    def prior_xy(self) -> np.ndarray:
        return _frozen(np.array([e.location for e in self.prior], dtype=np.float64).reshape(-1, 2))

    @cached_property
    def new_xy(self) -> np.ndarray:
        return _frozen(np.array([e.location for e in self.new], dtype=np.float64).reshape(-1, 2))

    def replace_new(self, new_xy) -> "CohortPair":
        moved = tuple(
            PVInstallation(e.id, (float(x), float(y)), e.year, e.panel_area)
            for e, (x, y) in zip(self.new, np.asarray(new_xy).reshape(-1, 2))
        )
        return CohortPair(self.t, self.t_prime, self.prior, moved, self.prior_idx, self.new_idx)


def build_cohorts(community: Community, timeline: Timeline) -> list[CohortPair]:
    """One cohort pair per ordered timeline pair ``t < t'``."""
    years = community.years
    out = []
    for t, tp in timeline.pairs():
        prior_idx = np.nonzero(years <= t)[0]
        new_idx = np.nonzero(years == tp)[0]
        out.append(CohortPair(
            t, tp,
            tuple(community.events[i] for i in prior_idx),
            tuple(community.events[i] for i in new_idx),
            _frozen(prior_idx), _frozen(new_idx),
        ))
    return out


@dataclass(frozen=True)
class Violation:
    community_id: str
    kind: str
    detail: str
    event_id: str | None = None


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)
    excluded: set[str] = field(default_factory=set)
    invalid_events: dict[str, set[str]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors

    def violations_for(self, community_id) -> list[Violation]:
        return [v for v in self.violations if v.community_id == community_id]

    def usable(self, communities: Sequence[Community]) -> list[Community]:
        """Included communities, with invalid events dropped."""
        out = []
        for c in communities:
            if c.id in self.excluded or c.id in self.errors:
                continue
            bad = self.invalid_events.get(c.id)
            out.append(c.with_events(e for e in c.events if e.id not in bad) if bad else c)
        return out


def check_polygon(polygon) -> None:
    ring = geometry.as_ring(polygon)
    if not geometry.is_simple(ring):
        raise GeometryError("polygon is self-intersecting")
    if not geometry.shoelace_area(ring) > 0:
        raise GeometryError("polygon has zero area")


def validate_dataset(communities: Sequence[Community], timeline: Timeline,
                     min_events: int = MIN_EVENTS) -> ValidationReport:
    """Flag out-of-polygon events, unknown years and undersized communities.

    Malformed polygons are recorded in ``report.errors`` (the community
    cannot be analysed); communities under ``min_events`` valid events are
    flagged excluded, never dropped from the input.
    """
    report = ValidationReport()
    known = set(timeline.years)
    for c in communities:
        try:
            check_polygon(c.polygon)
        except GeometryError as exc:
            report.errors[c.id] = str(exc)
            report.excluded.add(c.id)
            continue
        bad: set[str] = set()
        if len(c):
            inside = geometry.points_in_polygon(c.ring, c.xy)
        else:
            inside = np.zeros(0, dtype=bool)
        for e, ok in zip(c.events, inside):
            if not ok:
                report.violations.append(Violation(c.id, "outside_polygon",
                                                   f"event at {e.location} outside polygon", e.id))
                bad.add(e.id)
            if e.year not in known:
                report.violations.append(Violation(c.id, "unknown_year",
                                                   f"year {e.year} not in timeline", e.id))
                bad.add(e.id)
            if not e.panel_area > 0:
                report.violations.append(Violation(c.id, "bad_panel_area",
                                                   f"panel_area {e.panel_area} <= 0", e.id))
                bad.add(e.id)
        if bad:
            report.invalid_events[c.id] = bad
        n_valid = len(c) - len(bad)
        if n_valid < min_events:
            report.violations.append(Violation(c.id, "too_few_events",
                                               f"{n_valid} valid events < {min_events}"))
            report.excluded.add(c.id)
    return report
