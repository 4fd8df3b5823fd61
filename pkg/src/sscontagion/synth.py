"""Synthetic communities with known generating processes.

Three processes are available:

``cstr``
    Events uniform in the polygon, independent of year.
``thomas``
    Parents are the first-year events, uniform in the polygon; every later
    event is an offspring displaced from a uniformly chosen parent by an
    isotropic Gaussian of scale ``sigma``.
``contagion``
    Year-by-year: each new event is, with probability ``p``, displaced
    from a uniformly chosen earlier adopter by an isotropic Gaussian of
    scale ``kernel_range``; otherwise it is uniform.

Displaced points falling outside the polygon are redrawn. Panel areas are
lognormal with per-year mean and SD matched by moment inversion. All draws
come from one counter-based stream keyed by ``(seed, community_id,
process)``, so a configuration always yields the same community.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import DEFAULT_YEARS, Community
from .geometry import as_ring, points_in_polygon, shoelace_area
from .rng import Stream, derive_key

PROCESSES = ("cstr", "thomas", "contagion")

# detected panel size (m^2) by year: mean, SD
PANEL_MOMENTS = {
    2012: (4.31, 2.55),
    2015: (4.94, 3.14),
    2016: (5.26, 3.62),
    2017: (5.43, 4.11),
    2020: (6.16, 4.57),
    2021: (6.82, 5.16),
    2022: (8.27, 6.24),
}
# newly detected panels per snapshot (increments of the cumulative totals)
YEAR_SHARES = {2012: 4847, 2015: 3160, 2016: 1317, 2017: 4190, 2020: 4522, 2021: 2951, 2022: 4367}

MAX_REDRAWS = 1000


@dataclass(frozen=True)
class SynthConfig:
    process: str = "cstr"
    polygon: tuple = ((0.0, 0.0), (300.0, 0.0), (300.0, 300.0), (0.0, 300.0))
    counts: Mapping[int, int] = field(default_factory=lambda: {y: 30 for y in DEFAULT_YEARS})
    sigma: float = 15.0
    offspring_mean: float | None = None
    kernel_range: float = 20.0
    p: float = 0.9
    panel_moments: Mapping[int, tuple[float, float]] = field(default_factory=lambda: dict(PANEL_MOMENTS))
    seed: int = 0
    community_id: str = "synth-0"

    def __post_init__(self):
        if self.process not in PROCESSES:
            raise ValueError(f"unknown process {self.process!r}; expected one of {PROCESSES}")
        if not (self.sigma > 0 and self.kernel_range > 0):
            raise ValueError("sigma and kernel_range must be positive")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if any(int(c) < 0 for c in self.counts.values()):
            raise ValueError("event counts must be non-negative")
        if self.offspring_mean is not None and self.offspring_mean < 0:
            raise ValueError("offspring_mean must be non-negative")

    @property
    def years(self) -> list[int]:
        return sorted(int(y) for y in self.counts)


def lognormal_params(mean: float, sd: float) -> tuple[float, float]:
    """``(mu, sigma)`` of the log so that the lognormal has this mean and SD."""
    s2 = math.log1p((sd / mean) ** 2)
    return math.log(mean) - 0.5 * s2, math.sqrt(s2)


def split_counts(total: int, years: Sequence[int] = DEFAULT_YEARS,
                 shares: Mapping[int, float] = YEAR_SHARES) -> dict[int, int]:
    """Largest-remainder split of ``total`` events across years by ``shares``."""
    w = np.array([float(shares[y]) for y in years])
    raw = total * w / w.sum()
    base = np.floor(raw).astype(int)
    rest = total - int(base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rest]] += 1
    return {int(y): int(c) for y, c in zip(years, base)}


def _uniform_in(ring, stream: Stream, n: int) -> np.ndarray:
    out = np.empty((n, 2))
    lo, hi = ring.min(axis=0), ring.max(axis=0)
    filled = 0
    drawn = 0
    while filled < n:
        if drawn > MAX_REDRAWS * max(n, 1):
            raise RuntimeError("uniform sampling in polygon exceeded its candidate budget")
        m = max(16, 2 * (n - filled))
        u = stream.uniform(2 * m).reshape(m, 2)
        cand = lo + u * (hi - lo)
        ok = cand[points_in_polygon(ring, cand)]
        take = min(len(ok), n - filled)
        out[filled:filled + take] = ok[:take]
        filled += take
        drawn += m
    return out


def _displaced(ring, stream: Stream, centers: np.ndarray, scale: float) -> np.ndarray:
    """Gaussian displacement of each center; outside draws are redrawn."""
    out = np.empty_like(centers)
    pending = np.arange(len(centers))
    for _ in range(MAX_REDRAWS):
        if not len(pending):
            return out
        z = stream.normal(2 * len(pending)).reshape(-1, 2)
        cand = centers[pending] + scale * z
        ok = points_in_polygon(ring, cand)
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
    # centers are inside the polygon, so this is only reached for pathological scales
    out[pending] = centers[pending]
    return out


def _panel_areas(cfg: SynthConfig, stream: Stream, years: np.ndarray) -> np.ndarray:
    z = stream.normal(len(years))
    known = sorted(cfg.panel_moments)
    out = np.empty(len(years))
    for i, y in enumerate(years):
        prior = [k for k in known if k <= y]
        mean, sd = cfg.panel_moments[prior[-1] if prior else known[0]]
        mu, s = lognormal_params(mean, sd)
        out[i] = math.exp(mu + s * z[i])
    return out


def _stream(cfg: SynthConfig, tag: str) -> Stream:
    return Stream(derive_key(cfg.seed, cfg.community_id, cfg.process, tag))


def _assemble(cfg: SynthConfig, ring, xy, years) -> Community:
    areas = _panel_areas(cfg, _stream(cfg, "panel"), np.asarray(years))
    return Community.from_arrays(cfg.community_id, ring, xy, years, areas)


def _year_labels(cfg: SynthConfig) -> np.ndarray:
    return np.concatenate([np.full(int(cfg.counts[y]), y, dtype=np.int64) for y in cfg.years]) \
        if cfg.counts else np.zeros(0, dtype=np.int64)


def gen_cstr(cfg: SynthConfig) -> Community:
    """Per-year counts placed uniformly in the polygon."""
    ring = as_ring(cfg.polygon)
    years = _year_labels(cfg)
    xy = _uniform_in(ring, _stream(cfg, "xy"), len(years))
    return _assemble(cfg, ring, xy, years)


def gen_thomas(cfg: SynthConfig) -> Community:
    """First-year parents uniform; later-year offspring Gaussian around parents.

    With ``offspring_mean`` set, each parent gets a Poisson number of
    offspring, each in a uniformly chosen later year, instead of the
    configured later-year counts.
    """
    ring = as_ring(cfg.polygon)
    stream = _stream(cfg, "xy")
    yrs = cfg.years
    first = yrs[0]
    parents = _uniform_in(ring, stream, int(cfg.counts[first]))
    if cfg.offspring_mean is not None:
        k = stream.poisson(cfg.offspring_mean, len(parents))
        parent_of = np.repeat(np.arange(len(parents)), k)
        later = np.asarray(yrs[1:], dtype=np.int64)
        off_years = later[stream.integers(len(later), len(parent_of))] if len(later) else \
            np.zeros(0, dtype=np.int64)
        order = np.argsort(off_years, kind="stable")
        parent_of, off_years = parent_of[order], off_years[order]
    else:
        off_years = np.concatenate([np.full(int(cfg.counts[y]), y, dtype=np.int64) for y in yrs[1:]]) \
            if len(yrs) > 1 else np.zeros(0, dtype=np.int64)
        if len(parents) == 0 and len(off_years):
            raise ValueError("thomas process needs first-year parents for later offspring")
        parent_of = stream.integers(max(len(parents), 1), len(off_years))
    offspring = _displaced(ring, stream, parents[parent_of], cfg.sigma) if len(off_years) else \
        np.zeros((0, 2))
    xy = np.vstack([parents, offspring])
    years = np.concatenate([np.full(len(parents), first, dtype=np.int64), off_years])
    return _assemble(cfg, ring, xy, years)


def gen_contagion(cfg: SynthConfig) -> Community:
    """Forward-time contagion: each new event copies a random earlier adopter with probability ``p``."""
    ring = as_ring(cfg.polygon)
    stream = _stream(cfg, "xy")
    xy_parts: list[np.ndarray] = []
    yr_parts: list[np.ndarray] = []
    for y in cfg.years:
        n = int(cfg.counts[y])
        prior = np.vstack(xy_parts) if xy_parts else np.zeros((0, 2))
        pts = np.empty((n, 2))
        if len(prior) and cfg.p > 0:
            near = stream.uniform(n) < cfg.p
        else:
            near = np.zeros(n, dtype=bool)
        k = int(near.sum())
        if k:
            src = prior[stream.integers(len(prior), k)]
            pts[near] = _displaced(ring, stream, src, cfg.kernel_range)
        pts[~near] = _uniform_in(ring, stream, n - k)
        xy_parts.append(pts)
        yr_parts.append(np.full(n, y, dtype=np.int64))
    xy = np.vstack(xy_parts) if xy_parts else np.zeros((0, 2))
    years = np.concatenate(yr_parts) if yr_parts else np.zeros(0, dtype=np.int64)
    return _assemble(cfg, ring, xy, years)


GENERATORS = {"cstr": gen_cstr, "thomas": gen_thomas, "contagion": gen_contagion}


def generate(cfg: SynthConfig) -> Community:
    return GENERATORS[cfg.process](cfg)


def random_polygon(stream: Stream, area: float, n_vertices: int = 12,
                   jitter: float = 0.25, center=(0.0, 0.0)) -> np.ndarray:
    """Star-shaped (hence simple) polygon with the requested area."""
    theta = np.sort(stream.uniform(n_vertices)) * 2.0 * math.pi
    # spread the angles so no two vertices nearly coincide
    theta = 0.5 * theta + 0.5 * (np.arange(n_vertices) + 0.5) * 2.0 * math.pi / n_vertices
    radius = 1.0 + jitter * (2.0 * stream.uniform(n_vertices) - 1.0)
    ring = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    ring *= math.sqrt(area / shoelace_area(ring))
    return ring + np.asarray(center, dtype=float)


def synth_region(n_communities: int, *, events: int | Sequence[int] = 300, process: str = "contagion",
                 seed: int = 0, area: float | tuple[float, float] = (2.0e5, 6.0e5),
                 years: Sequence[int] = DEFAULT_YEARS, **params) -> list[Community]:
    """A region of independent synthetic communities with irregular polygons.

    ``events`` is the per-community total (split across years in proportion
    to the reference detection increments); ``area`` is a fixed polygon area
    or a ``(low, high)`` range drawn uniformly. Communities are laid out on
    a grid so their polygons do not overlap.
    """
    stream = Stream(derive_key(seed, "region", process))
    out = []
    width = math.ceil(math.sqrt(max(n_communities, 1)))
    for i in range(n_communities):
        a = area if np.isscalar(area) else area[0] + (area[1] - area[0]) * float(stream.uniform(1)[0])
        spacing = 4.0 * math.sqrt(max(area) if not np.isscalar(area) else area)
        center = ((i % width) * spacing, (i // width) * spacing)
        ring = random_polygon(stream, float(a), center=center)
        n = events if np.isscalar(events) else events[i]
        cid = f"c{i:04d}"
        cfg = SynthConfig(process=process, polygon=tuple(map(tuple, ring)),
                          counts=split_counts(int(n), years), seed=seed, community_id=cid, **params)
        out.append(generate(cfg))
    return out
