import itertools
import math

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sscontagion.inference import (REGRESSION_COLUMNS, CollinearityError, DegenerateOutcomeError,
                                   SeparationError, anova_tukey, compact_letters, design_matrix,
                                   mann_whitney, multinomial_logit, ols_cluster_robust,
                                   ols_cluster_robust_arrays, saturated_log_odds, wald_joint_test)

TYPES = ("stable", "upward", "downward")
WINDOWS = ("T1", "T2", "T3")
TRUE_COEF = np.array([0.3, 0.5, -0.4, 0.1, 0.2, -0.3, 0.25, 0.15, -0.2])


def transition_table(n_comm, seed, coef=TRUE_COEF, noise=1.0, cluster_sd=0.5):
    """Each community contributes one row per window; noise shares a community effect."""
    rng = np.random.default_rng(seed)
    types = rng.choice(TYPES, size=n_comm * 3)
    windows = np.tile(WINDOWS, n_comm)
    clusters = np.repeat(np.arange(n_comm), 3)
    X = design_matrix(types, windows)
    u = rng.normal(0, cluster_sd, n_comm)[clusters] + rng.normal(0, noise, len(types))
    return X @ coef + u, X, clusters


def loop_sandwich(X, e, g):
    """Cluster covariance built one cluster at a time."""
    n, k = X.shape
    bread = np.linalg.inv(X.T @ X)
    meat = np.zeros((k, k))
    labels = sorted(set(g))
    for c in labels:
        s = np.zeros(k)
        for i in range(n):
            if g[i] == c:
                s += X[i] * e[i]
        meat += np.outer(s, s)
    G = len(labels)
    return G / (G - 1) * (n - 1) / (n - k) * bread @ meat @ bread


class TestRegression:
    def test_design_columns(self):
        X = design_matrix(["upward", "downward", "stable"], ["T2", "T3", "T1"])
        assert X.shape == (3, len(REGRESSION_COLUMNS))
        assert list(X[0]) == [1, 1, 0, 1, 0, 1, 0, 0, 0]
        assert list(X[1]) == [1, 0, 1, 0, 1, 0, 0, 0, 1]
        assert list(X[2]) == [1, 0, 0, 0, 0, 0, 0, 0, 0]

    def test_zero_noise_recovery(self):
        y, X, g = transition_table(60, 1, noise=0.0, cluster_sd=0.0)
        res = ols_cluster_robust_arrays(y, X, g, REGRESSION_COLUMNS)
        assert np.allclose(res.coef, TRUE_COEF, rtol=0, atol=1e-12)
        assert res["upward"] == pytest.approx(0.5, abs=1e-12)

    def test_matches_statsmodels(self):
        y, X, g = transition_table(80, 2)
        res = ols_cluster_robust_arrays(y, X, g, REGRESSION_COLUMNS)
        ref = sm.OLS(y, X).fit(cov_type="cluster", cov_kwds={"groups": g})
        assert np.allclose(res.coef, ref.params, rtol=1e-10)
        assert np.allclose(res.se, ref.bse, rtol=1e-10)
        assert np.allclose(res.pvalues, ref.pvalues, rtol=1e-8)
        assert res.n_obs == 240 and res.n_clusters == 80

    def test_matches_loop_oracle(self):
        y, X, g = transition_table(30, 3)
        res = ols_cluster_robust_arrays(y, X, g)
        e = y - X @ res.coef
        assert np.allclose(res.cov, loop_sandwich(X, e, list(g)), rtol=1e-10, atol=1e-14)

    def test_records_interface(self):
        y, X, g = transition_table(40, 4)
        types = np.array(TYPES)[(X[:, 1] + 2 * X[:, 2]).astype(int)]
        windows = np.array(WINDOWS)[(X[:, 3] + 2 * X[:, 4]).astype(int)]
        rows = [{"type": t, "window": w, "delta_ai": v, "community_id": f"c{c}"}
                for t, w, v, c in zip(types, windows, y, g)]
        a = ols_cluster_robust(rows)
        b = ols_cluster_robust_arrays(y, X, g, REGRESSION_COLUMNS)
        assert np.allclose(a.coef, b.coef, rtol=1e-12) and a.names == REGRESSION_COLUMNS

    def test_collinear_columns_named(self):
        # every type x window cell except downward in T2, so that column is all zero
        cells = [c for c in itertools.product(TYPES, WINDOWS) if c != ("downward", "T2")] * 2
        X = design_matrix([c[0] for c in cells], [c[1] for c in cells])
        with pytest.raises(CollinearityError, match="collinear columns: downward:T2$"):
            ols_cluster_robust_arrays(np.zeros(len(cells)), X, np.arange(len(cells)), REGRESSION_COLUMNS)

    def test_one_cluster(self):
        y, X, _ = transition_table(10, 5)
        with pytest.raises(ValueError):
            ols_cluster_robust_arrays(y, X, np.zeros(len(y)))

    def test_coverage_of_three_se(self):
        inside = []
        for s in range(200):
            y, X, g = transition_table(150, 100 + s)
            res = ols_cluster_robust_arrays(y, X, g)
            inside.append(np.abs(res.coef - TRUE_COEF) <= 3 * res.se)
        assert np.mean(inside, axis=0).min() >= 0.99


class TestWald:
    def test_scalar_case(self):
        y, X, g = transition_table(50, 6)
        res = ols_cluster_robust_arrays(y, X, g, REGRESSION_COLUMNS)
        w, p = wald_joint_test(res, ["upward"])
        j = REGRESSION_COLUMNS.index("upward")
        assert w == pytest.approx((res.coef[j] / res.se[j]) ** 2, rel=1e-10)
        assert p == pytest.approx(res.pvalues[j], rel=1e-8)

    def test_matches_statsmodels(self):
        y, X, g = transition_table(80, 7)
        res = ols_cluster_robust_arrays(y, X, g, REGRESSION_COLUMNS)
        ref = sm.OLS(y, X).fit(cov_type="cluster", cov_kwds={"groups": g})
        R = np.zeros((4, 9))
        for i, j in enumerate(range(5, 9)):
            R[i, j] = 1
        sw = ref.wald_test(R, use_f=False, scalar=True)
        w, p = wald_joint_test(res, REGRESSION_COLUMNS[5:])
        assert w == pytest.approx(float(sw.statistic), rel=1e-8)
        assert p == pytest.approx(float(sw.pvalue), rel=1e-6)

    def test_null_pvalues_uniform(self):
        ps = []
        for s in range(300):
            y, X, g = transition_table(120, 1000 + s, coef=np.r_[TRUE_COEF[:5], 0, 0, 0, 0])
            res = ols_cluster_robust_arrays(y, X, g, REGRESSION_COLUMNS)
            ps.append(wald_joint_test(res, REGRESSION_COLUMNS[5:])[1])
        assert stats.kstest(ps, "uniform").pvalue > 0.001

    def test_power(self):
        y, X, g = transition_table(100, 8, coef=np.r_[TRUE_COEF[:1], 3.0, TRUE_COEF[2:]])
        res = ols_cluster_robust_arrays(y, X, g, REGRESSION_COLUMNS)
        assert wald_joint_test(res, ["upward"])[1] < 0.001

    def test_empty_subset(self):
        y, X, g = transition_table(20, 9)
        with pytest.raises(ValueError):
            wald_joint_test(ols_cluster_robust_arrays(y, X, g), [])

    def test_singular(self):
        # two clusters give a meat matrix of rank two, so a four-term subset is singular
        y, X, g = transition_table(60, 10)
        res = ols_cluster_robust_arrays(y, X, g % 2, REGRESSION_COLUMNS)
        with pytest.raises(np.linalg.LinAlgError):
            wald_joint_test(res, REGRESSION_COLUMNS[5:])


def mlm_rows(counts):
    outcomes, windows = [], []
    for (c, w), n in counts.items():
        outcomes += [c] * n
        windows += [w] * n
    return outcomes, windows


class TestMultinomialLogit:
    def test_identical_frequencies(self):
        counts = {(c, w): n for w in ("T1", "T2", "T3") for c, n in zip(TYPES, (30, 12, 8))}
        res = multinomial_logit(*mlm_rows(counts))
        assert res.converged
        for c, w in itertools.product(("upward", "downward"), ("T2", "T3")):
            assert res.log_odds(c, w) == pytest.approx(0.0, abs=1e-9)
            assert res.odds_ratio(c, w) == pytest.approx(1.0, abs=1e-9)

    def test_halving(self):
        counts = {("stable", "T1"): 20, ("upward", "T1"): 20, ("downward", "T1"): 10,
                  ("stable", "T2"): 40, ("upward", "T2"): 20, ("downward", "T2"): 20}
        res = multinomial_logit(*mlm_rows(counts))
        assert res.odds_ratio("upward", "T2") == pytest.approx(0.5, rel=1e-8)
        assert res.log_odds("downward", "T2") == pytest.approx(
            saturated_log_odds(counts, "downward", "T2"), abs=1e-9)
        assert res.windows == ("T1", "T2")

    def test_matches_statsmodels(self):
        rng = np.random.default_rng(3)
        windows = rng.choice(WINDOWS, 400)
        outcomes = rng.choice(TYPES, 400, p=[0.5, 0.3, 0.2])
        res = multinomial_logit(outcomes, windows)
        codes = np.array([TYPES.index(o) for o in outcomes])
        X = np.column_stack([np.ones(400), windows == "T2", windows == "T3"]).astype(float)
        ref = sm.MNLogit(codes, X).fit(disp=0, method="newton", tol=1e-12)
        assert np.allclose(res.params, ref.params.T, atol=1e-7)
        assert np.allclose(res.se, np.asarray(ref.bse).T, rtol=1e-6)
        assert res.loglik == pytest.approx(ref.llf, rel=1e-10)

    def test_separation(self):
        counts = {("stable", "T1"): 5, ("upward", "T1"): 5, ("stable", "T2"): 5}
        with pytest.raises(SeparationError, match="upward.*T2"):
            multinomial_logit(*mlm_rows(counts))

    @pytest.mark.parametrize("outcomes,windows", [
        (["upward", "downward"], ["T1", "T1"]),
        (["stable", "stable"], ["T1", "T2"]),
        (["stable", "upward"], ["T2", "T2"]),
    ])
    def test_degenerate_outcomes(self, outcomes, windows):
        with pytest.raises(DegenerateOutcomeError):
            multinomial_logit(outcomes, windows)

    def test_table_rows(self):
        counts = {(c, w): 10 + i for i, (c, w) in enumerate(itertools.product(TYPES, WINDOWS))}
        rows = multinomial_logit(*mlm_rows(counts)).table()
        assert [(r[0], r[1]) for r in rows] == [("upward", "T2"), ("upward", "T3"),
                                                ("downward", "T2"), ("downward", "T3")]
        assert all(0 <= r[5] <= 1 for r in rows)


class TestAnova:
    def test_identical_groups(self):
        g = [1.0, 2.0, 3.0, 4.0]
        res = anova_tukey({"x": g, "y": g})
        assert res.f == pytest.approx(0.0, abs=1e-12)
        assert res.letters == {"x": "a", "y": "a"}

    def test_separated_means(self):
        rng = np.random.default_rng(0)
        res = anova_tukey({"lo": rng.normal(0, 0.1, 30), "hi": rng.normal(10, 0.1, 30)})
        assert res.p < 0.001
        assert res.letters["lo"] != res.letters["hi"]

    def test_one_differs(self):
        rng = np.random.default_rng(1)
        res = anova_tukey({"a": rng.normal(0, 1, 40), "b": rng.normal(0, 1, 40),
                           "c": rng.normal(5, 1, 40)})
        assert res.letters == {"a": "a", "b": "a", "c": "b"}

    def test_matches_scipy(self):
        rng = np.random.default_rng(2)
        groups = {k: rng.normal(m, 1.0, n) for k, m, n in (("a", 0, 12), ("b", 0.8, 20), ("c", 0.3, 9))}
        res = anova_tukey(groups)
        f, p = stats.f_oneway(*groups.values())
        assert res.f == pytest.approx(f, rel=1e-10) and res.p == pytest.approx(p, rel=1e-8)
        ref = stats.tukey_hsd(*groups.values())
        for pair in res.pairs:
            i, j = "abc".index(pair.a), "abc".index(pair.b)
            assert pair.p == pytest.approx(ref.pvalue[i, j], rel=1e-4, abs=1e-8)

    def test_degenerate(self):
        res = anova_tukey({"a": [2.0, 2.0], "b": [2.0, 2.0]})
        assert res.degenerate and math.isnan(res.f) and res.letters == {"a": "a", "b": "a"}

    def test_too_small(self):
        with pytest.raises(ValueError):
            anova_tukey({"a": [1.0, 2.0], "b": [1.0]})
        with pytest.raises(ValueError):
            anova_tukey({"a": [1.0, 2.0]})


class TestLetters:
    def test_chain(self):
        # a differs from c only: a and b share, b and c share
        assert compact_letters(["a", "b", "c"], [("a", "c")]) == {"a": "a", "b": "ab", "c": "b"}

    @settings(max_examples=60)
    @given(st.integers(2, 6), st.data())
    def test_letters_encode_significance(self, k, data):
        names = [f"g{i}" for i in range(k)]
        pairs = list(itertools.combinations(names, 2))
        sig = data.draw(st.lists(st.sampled_from(pairs), unique=True))
        letters = compact_letters(names, sig)
        for a, b in pairs:
            share = bool(set(letters[a]) & set(letters[b]))
            assert share == ((a, b) not in sig)


class TestMannWhitney:
    def test_identical(self):
        assert mann_whitney([1, 2, 3], [1, 2, 3])[1] == pytest.approx(1.0)

    def test_exact_enumeration(self):
        u, p = mann_whitney([1, 2, 3], [4, 5, 6])
        assert u == 0.0 and p == pytest.approx(0.1, abs=1e-12)

    def test_large_samples_normal(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(0, 1, 50), rng.normal(1, 1, 50)
        u, p = mann_whitney(a, b)
        ref = stats.mannwhitneyu(a, b, method="asymptotic")
        assert u == ref.statistic and p == pytest.approx(ref.pvalue)
        assert p < 0.001

    def test_empty(self):
        with pytest.raises(ValueError):
            mann_whitney([], [1.0])

    @settings(max_examples=40)
    @given(st.lists(st.integers(0, 50), min_size=1, max_size=15),
           st.lists(st.integers(0, 50), min_size=1, max_size=15))
    def test_u_symmetry(self, a, b):
        ua, pa = mann_whitney(a, b)
        ub, pb = mann_whitney(b, a)
        assert ua + ub == len(a) * len(b)
        assert pa == pytest.approx(pb, rel=1e-9)
