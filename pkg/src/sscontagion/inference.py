"""Regression and hypothesis tests for transition and adoption tables.

* OLS of relative adoption change on transition type x window with
  community-clustered sandwich standard errors and joint Wald tests;
* a window-saturated multinomial logit for transition types, fit by Newton
  iterations with step halving;
* one-way ANOVA with Tukey-Kramer comparisons and a compact letter display;
* the Mann-Whitney U test.

Cluster-robust p-values use the standard normal reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

REGRESSION_COLUMNS = (
    "intercept", "upward", "downward", "T2", "T3",
    "upward:T2", "downward:T2", "upward:T3", "downward:T3",
)
CATEGORIES = ("stable", "upward", "downward")
WINDOWS = ("T1", "T2", "T3")


class CollinearityError(ValueError):
    pass


class SeparationError(ValueError):
    pass


class DegenerateOutcomeError(ValueError):
    """Too few outcome categories or windows to fit the multinomial model."""


# ------------------------------------------------------------ regression

@dataclass(frozen=True, eq=False)
class RegressionResult:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    pvalues: np.ndarray
    cov: np.ndarray
    n_obs: int
    n_clusters: int
    reference: str = "normal"

    def __getitem__(self, name) -> float:
        return float(self.coef[self.names.index(name)])

    def index(self, names: Sequence[str]) -> list[int]:
        return [self.names.index(n) for n in names]


def design_matrix(types: Sequence[str], windows: Sequence[str]) -> np.ndarray:
    """Nine-column design: intercept, U, D, T2, T3 and the four U/D x T2/T3 interactions."""
    t = np.asarray(types)
    w = np.asarray(windows)
    u = (t == "upward").astype(float)
    d = (t == "downward").astype(float)
    t2 = (w == "T2").astype(float)
    t3 = (w == "T3").astype(float)
    return np.column_stack([np.ones(len(t)), u, d, t2, t3, u * t2, d * t2, u * t3, d * t3])


def collinear_columns(X: np.ndarray, names: Sequence[str], tol: float = 1e-10) -> list[str]:
    """Columns that add no rank beyond the columns before them."""
    bad = []
    kept: list[int] = []
    scale = max(1.0, float(np.abs(X).max())) if X.size else 1.0
    for j in range(X.shape[1]):
        trial = X[:, kept + [j]]
        if np.linalg.matrix_rank(trial, tol=tol * scale * max(X.shape)) == len(kept) + 1:
            kept.append(j)
        else:
            bad.append(names[j])
    return bad


def cluster_sandwich(X, resid, clusters) -> tuple[np.ndarray, int]:
    """Clustered covariance with the G/(G-1) * (N-1)/(N-k) small-sample factor."""
    n, k = X.shape
    codes, _ = _codes(clusters)
    g = int(codes.max()) + 1
    scores = np.zeros((g, k))
    np.add.at(scores, codes, X * resid[:, None])
    bread = np.linalg.inv(X.T @ X)
    meat = scores.T @ scores
    factor = g / (g - 1) * (n - 1) / (n - k)
    return factor * bread @ meat @ bread, g


def _codes(labels):
    uniq, codes = np.unique(np.asarray(labels), return_inverse=True)
    return codes.ravel(), uniq


def ols_cluster_robust_arrays(y, X, clusters, names: Sequence[str] | None = None) -> RegressionResult:
    """OLS with cluster-robust covariance on explicit arrays.

    Raises
    ------
    CollinearityError
        If ``X`` is rank deficient; the message names the offending columns.
    ValueError
        With fewer than two clusters.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    names = tuple(names or (f"x{j}" for j in range(X.shape[1])))
    if len(np.unique(np.asarray(clusters))) < 2:
        raise ValueError("cluster-robust errors need at least two clusters")
    bad = collinear_columns(X, names)
    if bad:
        raise CollinearityError(f"design matrix is rank deficient; collinear columns: {', '.join(bad)}")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    cov, g = cluster_sandwich(X, resid, clusters)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = coef / se
    p = 2.0 * stats.norm.sf(np.abs(z))
    return RegressionResult(names, coef, se, p, cov, len(y), g)


def ols_cluster_robust(rows) -> RegressionResult:
    """Fit the transition-type x window model on transition records of one dimension.

    ``rows`` holds objects or mappings with ``type``, ``window``,
    ``delta_ai`` and ``community_id``.
    """
    get = _getter(rows)
    types = [get(r, "type") for r in rows]
    windows = [get(r, "window") for r in rows]
    y = [float(get(r, "delta_ai")) for r in rows]
    clusters = [str(get(r, "community_id")) for r in rows]
    return ols_cluster_robust_arrays(y, design_matrix(types, windows), clusters, REGRESSION_COLUMNS)


def _getter(rows):
    if rows and isinstance(rows[0], Mapping):
        return lambda r, k: r[k]
    return getattr


def wald_joint_test(result: RegressionResult, subset: Sequence[str]) -> tuple[float, float]:
    """``W = b' V^-1 b`` over ``subset``, chi-square with ``len(subset)`` df."""
    if not subset:
        raise ValueError("Wald test needs a non-empty coefficient subset")
    idx = result.index(subset)
    b = result.coef[idx]
    v = result.cov[np.ix_(idx, idx)]
    if np.linalg.matrix_rank(v) < len(idx):
        raise np.linalg.LinAlgError(f"covariance of {list(subset)} is singular")
    w = float(b @ np.linalg.solve(v, b))
    return w, float(stats.chi2.sf(w, len(idx)))


# ------------------------------------------------------- multinomial logit

@dataclass(frozen=True, eq=False)
class MLMResult:
    categories: tuple[str, ...]
    windows: tuple[str, ...]
    params: np.ndarray  # (n_categories - 1, n_windows): intercept then window effects
    se: np.ndarray
    loglik: float
    iterations: int
    grad_norm: float
    converged: bool
    fitted: np.ndarray = field(repr=False)

    def log_odds(self, category: str, window: str) -> float:
        """Window effect on the log-odds of ``category`` vs the reference category."""
        return float(self.params[self.categories.index(category) - 1, self.windows.index(window)])

    def odds_ratio(self, category: str, window: str) -> float:
        return math.exp(self.log_odds(category, window))

    def pvalue(self, category: str, window: str) -> float:
        i, j = self.categories.index(category) - 1, self.windows.index(window)
        return float(2.0 * stats.norm.sf(abs(self.params[i, j] / self.se[i, j])))

    def table(self):
        """Rows ``(category, window, log_odds, odds_ratio, se, p)`` for non-reference windows."""
        out = []
        for c in self.categories[1:]:
            for w in self.windows[1:]:
                i, j = self.categories.index(c) - 1, self.windows.index(w)
                out.append((c, w, self.log_odds(c, w), self.odds_ratio(c, w), float(self.se[i, j]),
                            self.pvalue(c, w)))
        return out


def _mlm_loglik(B, X, Y):
    eta = np.column_stack([np.zeros(len(X)), X @ B.T])
    lse = np.logaddexp.reduce(eta, axis=1)
    return float(np.sum(Y * eta[:, 1:]) - lse.sum()), np.exp(eta - lse[:, None])


def multinomial_logit(outcomes: Sequence[str], windows: Sequence[str], *,
                      categories: Sequence[str] = CATEGORIES, window_levels: Sequence[str] = WINDOWS,
                      tol: float = 1e-8, max_iter: int = 100) -> MLMResult:
    """Window-saturated multinomial logit; the first category and window are references.

    Categories never observed are dropped. Raises :class:`SeparationError`
    naming the first empty (category, window) cell, since a saturated fit
    has no finite maximum there, and :class:`DegenerateOutcomeError` when
    a reference level is absent or only one category occurs.
    """
    outcomes = np.asarray(outcomes)
    windows = np.asarray(windows)
    cats = [c for c in categories if np.any(outcomes == c)]
    if categories[0] not in cats:
        raise DegenerateOutcomeError(f"reference category {categories[0]!r} is absent")
    if len(cats) < 2:
        raise DegenerateOutcomeError("multinomial logit needs at least two outcome categories")
    wins = [w for w in window_levels if np.any(windows == w)]
    if window_levels[0] not in wins:
        raise DegenerateOutcomeError(f"reference window {window_levels[0]!r} is absent")
    for w in wins:
        for c in cats:
            if not np.any((windows == w) & (outcomes == c)):
                raise SeparationError(f"empty cell: category {c!r} never occurs in window {w!r}")
    keep = np.isin(outcomes, cats) & np.isin(windows, wins)
    outcomes, windows = outcomes[keep], windows[keep]
    X = np.column_stack([np.ones(len(windows))] + [(windows == w).astype(float) for w in wins[1:]])
    Y = np.column_stack([(outcomes == c).astype(float) for c in cats[1:]])
    m, p = Y.shape[1], X.shape[1]
    B = np.zeros((m, p))
    ll, P = _mlm_loglik(B, X, Y)
    it = 0
    converged = False
    gnorm = math.inf
    for it in range(1, max_iter + 1):
        R = Y - P[:, 1:]
        grad = (R.T @ X).ravel()
        gnorm = float(np.abs(grad).max())
        if gnorm < tol:
            converged = True
            break
        H = _mlm_hessian(P[:, 1:], X)
        step = np.linalg.solve(H, grad).reshape(m, p)
        t = 1.0
        while True:
            cand = B + t * step
            ll_new, P_new = _mlm_loglik(cand, X, Y)
            if ll_new >= ll or t < 1e-10:
                break
            t *= 0.5
        B, ll, P = cand, ll_new, P_new
    else:
        R = Y - P[:, 1:]
        gnorm = float(np.abs((R.T @ X)).max())
        converged = gnorm < tol
    cov = np.linalg.inv(_mlm_hessian(P[:, 1:], X))
    se = np.sqrt(np.diag(cov)).reshape(m, p)
    return MLMResult(tuple(cats), tuple(wins), B, se, ll, it, gnorm, converged, P)


def _mlm_hessian(Pm, X):
    """Negative Hessian (observed information) of the multinomial log-likelihood."""
    n, m = Pm.shape
    p = X.shape[1]
    H = np.zeros((m * p, m * p))
    for a in range(m):
        for b in range(m):
            w = Pm[:, a] * ((a == b) - Pm[:, b])
            H[a * p:(a + 1) * p, b * p:(b + 1) * p] = (X * w[:, None]).T @ X
    return H


def saturated_log_odds(counts: Mapping[tuple[str, str], int], category: str, window: str,
                       reference: str = "stable", base_window: str = "T1") -> float:
    """Closed-form window effect ``log(n_cw/n_rw) - log(n_c,base/n_r,base)``."""
    return (math.log(counts[(category, window)] / counts[(reference, window)])
            - math.log(counts[(category, base_window)] / counts[(reference, base_window)]))


# ----------------------------------------------------------- ANOVA / Tukey

@dataclass(frozen=True)
class TukeyPair:
    a: str
    b: str
    diff: float
    q: float
    p: float
    reject: bool


@dataclass(frozen=True, eq=False)
class AnovaResult:
    groups: tuple[str, ...]
    means: tuple[float, ...]
    f: float
    p: float
    df_between: int
    df_within: int
    pairs: tuple[TukeyPair, ...]
    letters: dict
    degenerate: bool = False


@lru_cache(maxsize=256)
def tukey_critical(k: int, df: int, alpha: float = 0.05) -> float:
    """Upper ``alpha`` quantile of the studentized range for ``k`` means."""
    return float(stats.studentized_range.ppf(1.0 - alpha, k, df))


def anova_tukey(groups: Mapping[str, Sequence[float]], alpha: float = 0.05) -> AnovaResult:
    """One-way ANOVA with Tukey-Kramer pairwise comparisons.

    When every group is constant and all means are equal the test is
    degenerate: ``f`` and ``p`` are ``nan`` and all groups share one letter.
    """
    names = tuple(str(g) for g in groups)
    data = [np.asarray(groups[g], dtype=np.float64) for g in groups]
    if len(data) < 2:
        raise ValueError("ANOVA needs at least two groups")
    if any(len(d) < 2 for d in data):
        raise ValueError("every group needs at least two observations")
    k = len(data)
    n = sum(len(d) for d in data)
    means = np.array([d.mean() for d in data])
    grand = np.concatenate(data).mean()
    ss_b = float(sum(len(d) * (m - grand) ** 2 for d, m in zip(data, means)))
    ss_w = float(sum(((d - m) ** 2).sum() for d, m in zip(data, means)))
    df_b, df_w = k - 1, n - k
    equal_means = bool(np.all(means == means[0]))
    if ss_w == 0.0:
        if equal_means:
            letters = {g: "a" for g in names}
            return AnovaResult(names, tuple(means), math.nan, math.nan, df_b, df_w, (), letters, True)
        f, p = math.inf, 0.0
    else:
        f = (ss_b / df_b) / (ss_w / df_w)
        p = float(stats.f.sf(f, df_b, df_w))
    msw = ss_w / df_w
    crit = tukey_critical(k, df_w, alpha)
    pairs = []
    for i in range(k):
        for j in range(i + 1, k):
            diff = float(means[i] - means[j])
            se = math.sqrt(msw / 2.0 * (1.0 / len(data[i]) + 1.0 / len(data[j])))
            if se > 0:
                q = abs(diff) / se
                pq = float(stats.studentized_range.sf(q, k, df_w))
            else:
                q = math.inf if diff != 0 else 0.0
                pq = 0.0 if diff != 0 else 1.0
            pairs.append(TukeyPair(names[i], names[j], diff, q, pq, q > crit))
    letters = compact_letters(names, [(pr.a, pr.b) for pr in pairs if pr.reject])
    return AnovaResult(names, tuple(means), f, p, df_b, df_w, tuple(pairs), letters)


def compact_letters(names: Sequence[str], significant: Sequence[tuple[str, str]]) -> dict[str, str]:
    """Compact letter display by the insert-and-absorb algorithm.

    Groups sharing a letter are not significantly different. Letters are
    assigned in order of the first group (in ``names`` order) carrying them.
    """
    sets: list[set] = [set(names)]
    for a, b in significant:
        nxt = []
        for s in sets:
            if a in s and b in s:
                nxt.extend([s - {a}, s - {b}])
            else:
                nxt.append(s)
        # absorb: drop sets contained in another
        uniq = []
        for s in nxt:
            if s and s not in uniq:
                uniq.append(s)
        sets = [s for s in uniq if not any(s < o for o in uniq)]
    order = {g: i for i, g in enumerate(names)}
    sets.sort(key=lambda s: sorted(order[g] for g in s))
    out = {g: "" for g in names}
    for i, s in enumerate(sets):
        letter = _letter(i)
        for g in names:
            if g in s:
                out[g] += letter
    return out


def _letter(i: int) -> str:
    s = ""
    i += 1
    while i:
        i, r = divmod(i - 1, 26)
        s = chr(ord("a") + r) + s
    return s


# ------------------------------------------------------------ Mann-Whitney

EXACT_MAX_N = 20


def mann_whitney(sample_a, sample_b) -> tuple[float, float]:
    """Two-sided Mann-Whitney U for ``sample_a``; returns ``(U_a, p)``.

    The exact null distribution is used when both samples have at most 20
    observations and there are no ties; otherwise the normal approximation
    with tie and continuity corrections.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    ties = len(np.unique(pooled)) < len(pooled)
    exact = max(len(a), len(b)) <= EXACT_MAX_N and not ties
    res = stats.mannwhitneyu(a, b, alternative="two-sided",
                             method="exact" if exact else "asymptotic", use_continuity=True)
    return float(res.statistic), float(min(1.0, res.pvalue))
