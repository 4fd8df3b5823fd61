"""Pattern classification (intensity x range) and transition typing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

HIGH, LOW = "high", "low"
LONG, SHORT = "long", "short"
UPWARD, DOWNWARD, STABLE = "upward", "downward", "stable"
INTENSITY, RANGE = "intensity", "range"

FIXED_GLOBAL = "fixed-global"
PERIOD_SPECIFIC = "period-specific"

# window -> (year pair before, year pair after)
TRANSITION_WINDOWS = {
    "T1": ((2012, 2015), (2015, 2017)),
    "T2": ((2015, 2017), (2017, 2020)),
    "T3": ((2017, 2020), (2020, 2022)),
}


@dataclass(frozen=True)
class PatternLabel:
    intensity: str
    range: str

    def __post_init__(self):
        if self.intensity not in (HIGH, LOW) or self.range not in (LONG, SHORT):
            raise ValueError(f"invalid pattern label {self.intensity}-{self.range}")

    def __str__(self):
        return f"{self.intensity}-{self.range}"


@dataclass(frozen=True)
class Thresholds:
    ci_cut: float
    r_cut: float
    r_rel_cut: float
    provenance: str = FIXED_GLOBAL

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.ci_cut, self.r_cut, self.r_rel_cut)):
            raise ValueError("thresholds must be finite")

    @classmethod
    def reference(cls) -> "Thresholds":
        """Whole-period cuts of the reference study: CI 1.15, R 105.8 m, R* 0.86."""
        return cls(1.15, 105.8, 0.86, FIXED_GLOBAL)


@dataclass(frozen=True)
class TransitionRecord:
    community_id: str
    window: str
    dimension: str
    type: str
    delta_ai: float
    before: str = ""
    after: str = ""


def _value(m, name):
    if isinstance(m, Mapping):
        return m.get(name, math.nan)
    return getattr(m, name, math.nan)


def _complete(m) -> bool:
    vals = [_value(m, k) for k in ("ci", "r_abs", "r_rel")]
    return all(v is not None and not math.isnan(v) for v in vals)


def classify_pattern(metrics, thresholds: Thresholds) -> PatternLabel | None:
    """Strict-threshold classification; ``None`` marks an unclassifiable record.

    ``metrics`` is anything exposing ``ci``, ``r_abs`` and ``r_rel`` as
    attributes or mapping keys.
    """
    if not _complete(metrics):
        return None
    ci, r_abs, r_rel = (float(_value(metrics, k)) for k in ("ci", "r_abs", "r_rel"))
    intensity = HIGH if ci > thresholds.ci_cut else LOW
    long_ = r_abs > thresholds.r_cut or r_rel > thresholds.r_rel_cut
    return PatternLabel(intensity, LONG if long_ else SHORT)


def period_thresholds(metrics: Iterable, provenance: str = PERIOD_SPECIFIC) -> Thresholds:
    """Mean CI, R and R* over the records with complete metrics."""
    valid = [m for m in metrics if _complete(m)]
    if not valid:
        raise ValueError("no community has valid metrics for this period")
    n = len(valid)
    return Thresholds(
        math.fsum(float(_value(m, "ci")) for m in valid) / n,
        math.fsum(float(_value(m, "r_abs")) for m in valid) / n,
        math.fsum(float(_value(m, "r_rel")) for m in valid) / n,
        provenance,
    )


def transition_type(label_before: PatternLabel | None, label_after: PatternLabel | None,
                    dimension: str) -> str | None:
    """``upward``, ``downward`` or ``stable`` along one dimension; ``None`` if unclassified."""
    if label_before is None or label_after is None:
        return None
    if dimension == INTENSITY:
        a, b, up = label_before.intensity, label_after.intensity, (LOW, HIGH)
    elif dimension == RANGE:
        a, b, up = label_before.range, label_after.range, (SHORT, LONG)
    else:
        raise ValueError(f"unknown dimension {dimension!r}")
    if a == b:
        return STABLE
    return UPWARD if (a, b) == up else DOWNWARD


def window_years(window: str, windows=TRANSITION_WINDOWS) -> tuple[int, int]:
    """Start and end snapshot years spanned by a transition window."""
    (t0, _), (_, t1) = windows[window]
    return t0, t1


def build_transitions(pair_metrics: Mapping[tuple, object], ai: Mapping[str, Mapping[int, float]],
                      community_ids: Sequence[str], thresholds_for, windows=TRANSITION_WINDOWS,
                      ) -> list[TransitionRecord]:
    """Transition records for every community, window and dimension.

    Parameters
    ----------
    pair_metrics : mapping
        ``(community_id, t, t_prime) -> metrics``.
    ai : mapping
        ``community_id -> {year: AI}``.
    community_ids : sequence of str
        Output order.
    thresholds_for : callable
        ``(t, t_prime) -> Thresholds`` used to classify that year pair, or
        ``None`` when the pair cannot be classified.
    """
    from .metrics import delta_ai

    out = []
    for cid in community_ids:
        for w, (p0, p1) in windows.items():
            labels = []
            for (t, tp) in (p0, p1):
                m = pair_metrics.get((cid, t, tp))
                th = thresholds_for(t, tp) if m is not None else None
                labels.append(None if th is None else classify_pattern(m, th))
            y0, y1 = window_years(w, windows)
            dai = delta_ai(ai[cid][y0], ai[cid][y1])
            for dim in (INTENSITY, RANGE):
                kind = transition_type(labels[0], labels[1], dim)
                if kind is None:
                    continue
                out.append(TransitionRecord(cid, w, dim, kind, dai, str(labels[0]), str(labels[1])))
    return out
