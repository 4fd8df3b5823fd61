"""End-to-end orchestration: per-community estimation, then region-level tables.

Per-community work (edge tables, 21 observed curves and their null
envelopes, metrics, adoption intensity) is independent and runs on a
process pool; results are gathered in input order, so outputs never
depend on the number of workers.
"""

from __future__ import annotations

import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__, kernels
from .domain import Community, Timeline, build_cohorts
from .estimator import DistanceGrid, build_edge_tables, cross_l_year_pair
from .inference import (REGRESSION_COLUMNS, CollinearityError, DegenerateOutcomeError,
                        SeparationError, anova_tukey, multinomial_logit, ols_cluster_robust,
                        wald_joint_test)
from .io import Dataset, file_sha256, manifest_hash, write_csv, write_json
from .metrics import (SSCMetrics, adoption_intensity, aggregate_by_lag, ati_index, delta_ai,
                      pair_metrics)
from .nullmodels import DEFAULT_SIMS, build_envelopes
from .patterns import (FIXED_GLOBAL, INTENSITY, PERIOD_SPECIFIC, RANGE, TRANSITION_WINDOWS,
                       Thresholds, build_transitions, classify_pattern, period_thresholds,
                       window_years)

log = logging.getLogger(__name__)

THRESHOLD_MODES = ("global", "period")
LAGS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    n_sims: int = DEFAULT_SIMS
    grid_step: float = 10.0
    threshold_mode: str = "period"
    jobs: int = 1
    timeline: Timeline = field(default_factory=Timeline)

    def __post_init__(self):
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold mode must be one of {THRESHOLD_MODES}")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


@dataclass
class PairResult:
    t: int
    t_prime: int
    n_prior: int
    n_new: int
    metrics: SSCMetrics
    r: np.ndarray | None = None
    observed: np.ndarray | None = None
    global_lower: np.ndarray | None = None
    global_upper: np.ndarray | None = None
    pointwise_lower: np.ndarray | None = None
    pointwise_upper: np.ndarray | None = None


@dataclass
class CommunityResult:
    community_id: str
    n_events: int
    area: float
    r_max: float
    r_eff: float
    pairs: list[PairResult]
    ai: dict[int, float]


def analyze_community(community: Community, cfg: RunConfig) -> CommunityResult:
    """Observed curves, envelopes and metrics for every year pair of one community."""
    timeline = cfg.timeline
    ai = {y: adoption_intensity(community, y) for y in timeline.years}
    pairs: list[PairResult] = []
    cohorts = build_cohorts(community, timeline)
    try:
        grid = DistanceGrid.up_to(community.r_eff, cfg.grid_step)
    except ValueError:
        grid = None
    tables = build_edge_tables(community, grid) if grid is not None and len(community) else None
    for cohort in cohorts:
        n1, n2 = len(cohort.prior), len(cohort.new)
        if grid is None:
            m = SSCMetrics(community.id, cohort.t, cohort.t_prime, flags=("grid_too_short",))
            pairs.append(PairResult(cohort.t, cohort.t_prime, n1, n2, m))
            continue
        obs = cross_l_year_pair(community, cohort, grid, tables=tables)
        env = build_envelopes(community, cohort, grid, cfg.n_sims, cfg.seed, tables) if obs else None
        glob, point = env if env else (None, None)
        m = pair_metrics(community, obs, glob, cohort.t, cohort.t_prime)
        pr = PairResult(cohort.t, cohort.t_prime, n1, n2, m)
        if obs is not None:
            pr.r = grid.r_values
            pr.observed = obs.values
            pr.global_lower, pr.global_upper = glob.lower, glob.upper
            pr.pointwise_lower, pr.pointwise_upper = point.lower, point.upper
        pairs.append(pr)
    return CommunityResult(community.id, len(community), community.built_area, community.r_max,
                           community.r_eff, pairs, ai)


def _analyze_star(args):
    return analyze_community(*args)


def analyze_all(communities: Sequence[Community], cfg: RunConfig) -> list[CommunityResult]:
    """Per-community analysis in input order, optionally on a process pool."""
    if cfg.jobs == 1 or len(communities) <= 1:
        return [analyze_community(c, cfg) for c in communities]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(_analyze_star, [(c, cfg) for c in communities], chunksize=1))


# ------------------------------------------------------------- manifest

def run_fields(dataset_hashes: dict, cfg: RunConfig) -> dict:
    """Manifest fields that determine every output byte (no paths, workers or timings)."""
    return {
        "inputs": dataset_hashes,
        "seed": int(cfg.seed),
        "n_sims": int(cfg.n_sims),
        "grid_step": float(cfg.grid_step),
        "threshold_mode": cfg.threshold_mode,
        "timeline": list(cfg.timeline.years),
        "versions": {"sscontagion": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "envelope": {"global": "min/max", "pointwise": "rank 2.5%/97.5%"},
        "pvalue_reference": "normal",
    }


class Stages:
    """Run named stages, recording status and wall-clock time for the manifest."""

    def __init__(self):
        self.records: dict[str, dict] = {}
        self.failed = False

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
            self.records[name] = {"status": "ok"}
            return out
        except (CollinearityError, SeparationError, DegenerateOutcomeError, InsufficientData) as exc:
            self.records[name] = {"status": "skipped", "reason": str(exc)}
            log.warning("stage %s skipped: %s", name, exc)
        except Exception as exc:  # noqa: BLE001 - record and keep partial outputs
            self.failed = True
            self.records[name] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}",
                                  "traceback": traceback.format_exc()}
            log.error("stage %s failed: %s", name, exc)
        finally:
            self.records.setdefault(name, {})["seconds"] = round(time.perf_counter() - t0, 6)
        return None


class InsufficientData(ValueError):
    """A statistical stage has too little data to run."""


# ---------------------------------------------------------------- tables

METRIC_HEADER = ["community_id", "t", "t_prime", "lag", "n_prior", "n_new", "ci", "r_abs", "r_rel",
                 "he", "flags"]
CURVE_HEADER = ["r", "L", "global_lower", "global_upper", "pointwise_lower", "pointwise_upper"]


def _community_means(res: CommunityResult) -> dict:
    ms = [p.metrics for p in res.pairs]
    ci = aggregate_by_lag(ms, "ci")
    return {
        "ci": ci,
        "ci_mean": ci.mean,
        "he_mean": aggregate_by_lag(ms, "he").mean,
        "r_abs_mean": aggregate_by_lag(ms, "r_abs").mean,
        "r_rel_mean": aggregate_by_lag(ms, "r_rel").mean,
    }


def _finite(v) -> bool:
    return v is not None and not (isinstance(v, float) and math.isnan(v))


def run_pipeline(dataset: Dataset, cfg: RunConfig, out_dir, *, input_hashes: dict | None = None,
                 input_paths: Sequence[str] = ()) -> dict:
    """Run every stage and write the output bundle to ``out_dir``.

    Returns the manifest (also written as ``manifest.json``). Stage failures
    keep earlier outputs and are marked in the manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fields = run_fields(input_hashes or {}, cfg)
    run_id = manifest_hash(fields)
    stages = Stages()
    report = dataset.report
    communities = dataset.usable

    def csv_out(name, header, rows):
        write_csv(out / name, header, rows, run_id)

    stages.run("validation", csv_out, "validation.csv",
               ["community_id", "kind", "event_id", "detail", "excluded"],
               [(v.community_id, v.kind, v.event_id or "", v.detail, v.community_id in report.excluded)
                for v in report.violations]
               + [(cid, "polygon_error", "", msg, True) for cid, msg in report.errors.items()]
               + [(cid, "orphan_event", str(i), "no polygon with this community_id", True)
                  for i, cid in dataset.orphans])

    results = stages.run("estimation", analyze_all, communities, cfg)
    if results is None:
        return _finish(out, fields, run_id, stages, cfg, dataset, input_paths)

    def write_curves():
        for res in results:
            for p in res.pairs:
                if p.observed is None:
                    continue
                rows = zip(p.r, p.observed, p.global_lower, p.global_upper, p.pointwise_lower,
                           p.pointwise_upper)
                csv_out(f"curves/{res.community_id}_{p.t}_{p.t_prime}.csv", CURVE_HEADER, rows)

    stages.run("curves", write_curves)

    all_metrics = {(r.community_id, p.t, p.t_prime): p.metrics for r in results for p in r.pairs}
    stages.run("metrics", csv_out, "metrics.csv", METRIC_HEADER, [
        (r.community_id, p.t, p.t_prime, p.t_prime - p.t, p.n_prior, p.n_new, p.metrics.ci,
         p.metrics.r_abs, p.metrics.r_rel, p.metrics.he, ";".join(p.metrics.flags))
        for r in results for p in r.pairs])

    means = {r.community_id: _community_means(r) for r in results}
    stages.run("aggregated_ci", csv_out, "aggregated_ci.csv",
               ["community_id", *[f"ci_lag{h}" for h in LAGS], "ci_mean", "he_mean", "r_abs_mean",
                "r_rel_mean"],
               [(cid, *[m["ci"].per_lag.get(h, math.nan) for h in LAGS], m["ci_mean"], m["he_mean"],
                 m["r_abs_mean"], m["r_rel_mean"]) for cid, m in means.items()])

    years = cfg.timeline.years
    ai = {r.community_id: r.ai for r in results}

    def adoption():
        ati = ati_index({cid: [a[y] for y in years] for cid, a in ai.items()}, years)
        rows = []
        for cid, a in ai.items():
            dai = [delta_ai(a[window_years(w)[0]], a[window_years(w)[1]]) if all(
                y in a for y in window_years(w)) else math.nan for w in TRANSITION_WINDOWS]
            rows.append((cid, *[a[y] for y in years], ati[cid], *dai))
        csv_out("adoption.csv", ["community_id", *[f"ai_{y}" for y in years], "ati",
                                 *[f"delta_ai_{w}" for w in TRANSITION_WINDOWS]], rows)
        return ati

    ati = stages.run("adoption", adoption) or {}

    # whole-period thresholds from community means; patterns always use these
    def global_patterns():
        recs = {cid: {"ci": m["ci_mean"], "r_abs": m["r_abs_mean"], "r_rel": m["r_rel_mean"]}
                for cid, m in means.items()}
        th = period_thresholds(recs.values(), provenance=FIXED_GLOBAL)
        labels = {cid: classify_pattern(rec, th) for cid, rec in recs.items()}
        csv_out("patterns.csv", ["community_id", "ci_mean", "r_abs_mean", "r_rel_mean", "he_mean", "ati",
                                 "pattern"],
                [(cid, recs[cid]["ci"], recs[cid]["r_abs"], recs[cid]["r_rel"], means[cid]["he_mean"],
                  ati.get(cid, math.nan), str(labels[cid]) if labels[cid] else "unclassified")
                 for cid in recs])
        return th, labels

    pat = stages.run("patterns", global_patterns)
    global_th, labels = pat if pat else (None, {})

    period_cache: dict = {}

    def period_th(t, tp):
        """Contemporaneous mean thresholds, or ``None`` when no community has metrics."""
        if (t, tp) not in period_cache:
            try:
                period_cache[(t, tp)] = period_thresholds(
                    [m for (_, a, b), m in all_metrics.items() if (a, b) == (t, tp)], PERIOD_SPECIFIC)
            except ValueError:
                period_cache[(t, tp)] = None
        return period_cache[(t, tp)]

    def thresholds_for(t, tp):
        return global_th if cfg.threshold_mode == "global" else period_th(t, tp)

    def transitions():
        windows = {w: pp for w, pp in TRANSITION_WINDOWS.items()
                   if all(y in years for pair in pp for y in pair)}
        if not windows:
            raise InsufficientData("timeline does not cover any transition window")
        th_rows = [("global", "", "", *_th(global_th))] if global_th else []
        for t, tp in sorted({pair for pp in windows.values() for pair in pp}):
            if period_th(t, tp) is not None:
                th_rows.append(("period", t, tp, *_th(period_th(t, tp))))
        csv_out("thresholds.csv", ["scope", "t", "t_prime", "ci_cut", "r_cut", "r_rel_cut", "provenance"],
                th_rows)
        recs = build_transitions(all_metrics, ai, [r.community_id for r in results], thresholds_for,
                                 windows)
        csv_out("transitions.csv", ["community_id", "window", "dimension", "type", "before", "after",
                                    "delta_ai"],
                [(x.community_id, x.window, x.dimension, x.type, x.before, x.after, x.delta_ai)
                 for x in recs])
        return recs

    trans = stages.run("transitions", transitions) or []

    for dim in (INTENSITY, RANGE):
        rows = [x for x in trans if x.dimension == dim]
        stages.run(f"regression_{dim}", _regression, rows, dim, out, run_id)
        stages.run(f"mlm_{dim}", _mlm, rows, dim, out, run_id)

    stages.run("anova", _anova, results, means, ati, labels, out, run_id)
    return _finish(out, fields, run_id, stages, cfg, dataset, input_paths)


def _th(th: Thresholds):
    return th.ci_cut, th.r_cut, th.r_rel_cut, th.provenance


def _regression(rows, dim, out: Path, run_id):
    if len(rows) < 2:
        raise InsufficientData(f"{len(rows)} transition records for {dim}")
    res = ols_cluster_robust(rows)
    write_csv(out / f"regression_{dim}.csv",
              ["term", "coef", "se", "z", "p", "n_obs", "n_clusters", "reference"],
              [(n, b, s, b / s, p, res.n_obs, res.n_clusters, res.reference)
               for n, b, s, p in zip(res.names, res.coef, res.se, res.pvalues)], run_id)
    tests = {
        "transition_effects": [c for c in REGRESSION_COLUMNS if c.startswith(("upward", "downward"))],
        "interactions": [c for c in REGRESSION_COLUMNS if ":" in c],
    }
    wrows = []
    for name, subset in tests.items():
        # a cluster-robust covariance has rank at most n_clusters - 1, so a
        # small region can leave a joint test undefined; record it as such
        try:
            w, p = wald_joint_test(res, subset)
            note = ""
        except np.linalg.LinAlgError as exc:
            w, p, note = math.nan, math.nan, str(exc)
        wrows.append((name, " ".join(subset), w, len(subset), p, note))
    write_csv(out / f"wald_{dim}.csv", ["test", "terms", "statistic", "df", "p", "note"], wrows, run_id)
    return res


def _mlm(rows, dim, out: Path, run_id):
    if not rows:
        raise InsufficientData(f"no transition records for {dim}")
    res = multinomial_logit([x.type for x in rows], [x.window for x in rows])
    write_csv(out / f"mlm_{dim}.csv",
              ["category", "window", "log_odds", "odds_ratio", "se", "p", "iterations", "converged"],
              [(*row, res.iterations, res.converged) for row in res.table()], run_id)
    return res


def _anova(results, means, ati, labels, out: Path, run_id):
    tests = {}
    # CI by year pair within each lag
    for h in LAGS:
        groups = {}
        for r in results:
            for p in r.pairs:
                if p.t_prime - p.t == h and _finite(p.metrics.ci):
                    groups.setdefault(f"{p.t}-{p.t_prime}", []).append(p.metrics.ci)
        tests[f"ci_lag{h}"] = groups
    # ATI and HE by whole-period pattern
    for var, source in (("ati", lambda cid: ati.get(cid, math.nan)),
                        ("he", lambda cid: means[cid]["he_mean"])):
        groups = {}
        for cid, lab in labels.items():
            v = source(cid)
            if lab is not None and _finite(v):
                groups.setdefault(str(lab), []).append(v)
        tests[var] = dict(sorted(groups.items()))
    arows, trows, lrows = [], [], []
    for var, groups in tests.items():
        groups = {g: v for g, v in groups.items() if len(v) >= 2}
        if len(groups) < 2:
            continue
        res = anova_tukey(groups)
        arows.append((var, res.f, res.p, res.df_between, res.df_within, res.degenerate))
        trows.extend((var, pr.a, pr.b, pr.diff, pr.q, pr.p, pr.reject) for pr in res.pairs)
        lrows.extend((var, g, len(groups[g]), m, res.letters[g]) for g, m in zip(res.groups, res.means))
    write_csv(out / "anova.csv", ["variable", "f", "p", "df_between", "df_within", "degenerate"], arows,
              run_id)
    write_csv(out / "tukey.csv", ["variable", "group_a", "group_b", "diff", "q", "p", "reject"], trows,
              run_id)
    write_csv(out / "letters.csv", ["variable", "group", "n", "mean", "letters"], lrows, run_id)


def _finish(out: Path, fields, run_id, stages: Stages, cfg: RunConfig, dataset: Dataset,
            input_paths=()) -> dict:
    manifest = {
        "run_id": run_id,
        **fields,
        "input_paths": [str(p) for p in input_paths],
        "jobs": cfg.jobs,
        "backend": kernels.BACKEND,
        "stages": stages.records,
        "status": "failed" if stages.failed else "ok",
        "communities": {
            "input": len(dataset.communities),
            "analysed": len(dataset.usable),
            "excluded": sorted(dataset.report.excluded),
        },
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def input_hashes(*paths) -> dict:
    return {Path(p).name: file_sha256(p) for p in paths}
