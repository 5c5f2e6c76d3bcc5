import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as scipy_stats

from tlbench import metrics
from tlbench.metrics import (
    PairedSamples,
    UndefinedTestError,
    balanced_accuracy,
    bootstrap_ci,
    cohens_d_paired,
    confusion,
    paired_comparison,
    signed_rank_statistic,
    wilcoxon_signed_rank,
)
from tlbench.results import CellKey, ResultRow, ResultTable


class TestConfusion:
    def test_perfect_is_diagonal(self):
        cm = confusion(["a", "b", "a"], ["a", "b", "a"], ["a", "b"])
        assert np.array_equal(cm.counts, [[2, 0], [0, 1]])

    def test_hand_count(self):
        cm = confusion(["a", "a", "b", "b"], ["a", "b", "b", "b"], ["a", "b"])
        assert np.array_equal(cm.counts, [[1, 1], [0, 2]])

    def test_empty_is_zero_matrix(self):
        cm = confusion([], [], ["a", "b"])
        assert cm.counts.sum() == 0

    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            confusion(["a"], ["z"], ["a", "b"])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            confusion(["a"], ["a", "b"], ["a", "b"])


class TestBalancedAccuracy:
    def test_diagonal_is_one(self):
        cm = confusion(["a"] * 3 + ["b"] * 7, ["a"] * 3 + ["b"] * 7, ["a", "b"])
        assert balanced_accuracy(cm) == 1.0

    def test_hand_example(self):
        cm = metrics.ConfusionMatrix(np.array([[8, 2], [4, 6]]), ("a", "b"))
        assert balanced_accuracy(cm) == pytest.approx(0.7)

    def test_all_predicted_one_class(self):
        cm = confusion(["a", "a", "b", "b"], ["a", "a", "a", "a"], ["a", "b"])
        assert balanced_accuracy(cm) == pytest.approx(0.5)

    def test_zero_support_excluded_with_warning(self):
        cm = metrics.ConfusionMatrix(np.array([[5, 0], [0, 0]]), ("a", "b"))
        with pytest.warns(UserWarning, match="zero-support"):
            assert balanced_accuracy(cm) == 1.0

    def test_all_zero_rejected(self):
        cm = metrics.ConfusionMatrix(np.zeros((2, 2), dtype=int), ("a", "b"))
        with pytest.raises(ValueError):
            balanced_accuracy(cm)

    def test_equals_plain_accuracy_on_equal_support(self, rng):
        for _ in range(20):
            k = int(rng.integers(2, 5))
            n = 30
            true = [f"c{i}" for i in range(k) for _ in range(n)]
            pred = [f"c{int(rng.integers(0, k))}" for _ in range(k * n)]
            classes = [f"c{i}" for i in range(k)]
            cm = confusion(true, pred, classes)
            plain = sum(t == p for t, p in zip(true, pred)) / len(true)
            assert balanced_accuracy(cm) == pytest.approx(plain)

    def test_cross_check_sklearn(self, rng):
        from sklearn.metrics import balanced_accuracy_score

        true = rng.integers(0, 4, size=200)
        pred = rng.integers(0, 4, size=200)
        classes = [0, 1, 2, 3]
        cm = confusion(true.tolist(), pred.tolist(), classes)
        assert balanced_accuracy(cm) == pytest.approx(balanced_accuracy_score(true, pred))


class TestWilcoxon:
    def test_all_positive_small_sample(self):
        pairs = PairedSamples(a=np.zeros(3), b=np.array([1.0, 2.0, 3.0]))
        res = wilcoxon_signed_rank(pairs)
        assert res.statistic == 0.0
        one_tail = wilcoxon_signed_rank(pairs, alternative="greater")
        assert one_tail.p_value == pytest.approx(1 / 8)

    def test_exact_enumeration_oracle(self, rng):
        # independent oracle: enumerate all sign assignments directly
        d = rng.normal(size=9)
        d = d[d != 0]
        pairs = PairedSamples(a=np.zeros(len(d)), b=d)
        res = wilcoxon_signed_rank(pairs)
        ranks = scipy_stats.rankdata(np.abs(d))
        total = ranks.sum()
        stats = []
        for signs in itertools.product([0, 1], repeat=len(d)):
            w_plus = sum(r for r, s in zip(ranks, signs) if s)
            stats.append(min(w_plus, total - w_plus))
        expected = sum(s <= res.statistic for s in stats) / len(stats)
        assert res.p_value == pytest.approx(min(1.0, expected))

    def test_all_zero_differences_undefined(self):
        pairs = PairedSamples(a=np.ones(5), b=np.ones(5))
        with pytest.raises(UndefinedTestError):
            wilcoxon_signed_rank(pairs)

    def test_matches_scipy_large_sample(self, rng):
        a = rng.normal(size=40)
        b = a + rng.normal(0.3, 1.0, size=40)
        res = wilcoxon_signed_rank(PairedSamples(a=a, b=b))
        ref = scipy_stats.wilcoxon(b, a, zero_method="wilcox", correction=True, mode="approx")
        assert res.statistic == pytest.approx(ref.statistic)
        assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)

    def test_monotone_transform_invariance(self, rng):
        a = rng.uniform(1, 2, size=25)
        b = rng.uniform(1, 2, size=25)
        w1 = wilcoxon_signed_rank(PairedSamples(a=a, b=b)).statistic
        w2 = wilcoxon_signed_rank(PairedSamples(a=np.exp(a), b=np.exp(b))).statistic
        # exp is strictly monotone but does NOT preserve |d| ranks in general;
        # the invariance holds for affine x -> cx + m with c > 0
        w3 = wilcoxon_signed_rank(PairedSamples(a=3 * a + 1, b=3 * b + 1)).statistic
        assert w1 == w3
        assert isinstance(w2, float)

    def test_exact_vs_normal_agreement(self, rng):
        # tie-free cases, 10 <= n <= 12: exact and approximate p within 0.02
        for n in (10, 11, 12):
            for _ in range(30):
                d = rng.normal(size=n)
                while len(np.unique(np.abs(d))) != n or (d == 0).any():
                    d = rng.normal(size=n)
                pairs = PairedSamples(a=np.zeros(n), b=d)
                exact = wilcoxon_signed_rank(pairs).p_value
                ranks = scipy_stats.rankdata(np.abs(d))
                w_plus = float(ranks[d > 0].sum())
                w = min(w_plus, ranks.sum() - w_plus)
                mean = n * (n + 1) / 4.0
                sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)
                approx = min(1.0, 2.0 * scipy_stats.norm.cdf((w - mean + 0.5) / sigma))
                assert abs(exact - approx) <= 0.02

    def test_convention_variants(self):
        d = np.array([1.0, -2.0, 0.0, 3.0, -4.0])
        wp, wm, n = signed_rank_statistic(d, zero_method="drop")
        assert n == 4 and wp + wm == 10
        wp_z, wm_z, _ = signed_rank_statistic(d, zero_method="zsplit")
        assert wp_z + wm_z == 15


class TestCohensD:
    def test_identical_pairs_rejected(self):
        a = np.array([1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            cohens_d_paired(PairedSamples(a=a, b=a.copy()))

    def test_average_sd_denominator(self):
        a = np.array([1.0, 2.0, 3.0, 4.0])
        b = np.array([2.0, 2.5, 4.5, 5.0])
        d = cohens_d_paired(PairedSamples(a=a, b=b))
        expected = (b - a).mean() / math.sqrt((a.var(ddof=1) + b.var(ddof=1)) / 2)
        assert d == pytest.approx(expected)

    @given(
        st.floats(0.1, 50),
        st.floats(-100, 100),
    )
    @settings(max_examples=100, deadline=None)
    def test_scale_and_shift_invariance(self, c, m):
        rng = np.random.default_rng(0)
        a = rng.normal(size=12)
        b = a + rng.normal(0.5, 1.0, size=12)
        base = cohens_d_paired(PairedSamples(a=a, b=b))
        moved = cohens_d_paired(PairedSamples(a=c * a + m, b=c * b + m))
        assert moved == pytest.approx(base, rel=1e-9, abs=1e-12)


class TestBootstrap:
    @staticmethod
    def mean_diff(a, b):
        return float(np.mean(b - a))

    def test_constant_differences_point_interval(self):
        a = np.arange(10.0)
        pairs = PairedSamples(a=a, b=a + 3.0)
        lo, hi = bootstrap_ci(pairs, self.mean_diff, n_resamples=200, seed=1)
        assert lo == hi == 3.0

    def test_deterministic_given_seed(self, rng):
        a = rng.normal(size=15)
        b = a + rng.normal(0.5, 1, size=15)
        pairs = PairedSamples(a=a, b=b)
        assert bootstrap_ci(pairs, self.mean_diff, seed=7) == bootstrap_ci(
            pairs, self.mean_diff, seed=7
        )

    def test_brackets_mean_and_width_scaling(self):
        d = np.arange(1.0, 21.0)
        pairs = PairedSamples(a=np.zeros(20), b=d)
        lo, hi = bootstrap_ci(pairs, self.mean_diff, n_resamples=5000, seed=3)
        assert lo < 10.5 < hi
        dup = PairedSamples(a=np.zeros(40), b=np.concatenate([d, d]))
        lo2, hi2 = bootstrap_ci(dup, self.mean_diff, n_resamples=5000, seed=3)
        assert (hi2 - lo2) == pytest.approx((hi - lo) / math.sqrt(2), rel=0.15)

    def test_contains_point_statistic(self, rng):
        hits = 0
        for seed in range(100):
            a = rng.normal(size=12)
            b = a + rng.normal(1.0, 0.5, size=12)
            pairs = PairedSamples(a=a, b=b)
            lo, hi = bootstrap_ci(pairs, self.mean_diff, n_resamples=400, seed=seed)
            if lo <= self.mean_diff(a, b) <= hi:
                hits += 1
        assert hits >= 99

    def test_cross_check_scipy_bca(self, rng):
        a = rng.normal(size=25)
        b = a + rng.normal(0.8, 1.0, size=25)
        pairs = PairedSamples(a=a, b=b)
        lo, hi = bootstrap_ci(pairs, self.mean_diff, n_resamples=4000, seed=11)
        ref = scipy_stats.bootstrap(
            (a, b), lambda x, y, axis=-1: np.mean(y - x, axis=axis),
            paired=True, method="BCa", n_resamples=4000, random_state=0,
        )
        assert lo == pytest.approx(ref.confidence_interval.low, abs=0.1)
        assert hi == pytest.approx(ref.confidence_interval.high, abs=0.1)


def small_table():
    table = ResultTable()
    values = {
        ("d1", "m1", "l2sp"): (70.0, 72.0),
        ("d1", "m2", "l2sp"): (80.0, 81.0),
        ("d1", "m1", "fine_tuning"): (71.0, 74.0),
        ("d1", "m2", "fine_tuning"): (82.0, 81.5),
    }
    for (ds, model, app), (norm, extra) in values.items():
        for policy, v in (("norm_aug", norm), ("extra_aug", extra)):
            table.add(
                ResultRow(
                    key=CellKey(ds, model, app, policy, "baseline_fp32", "test"),
                    balanced_accuracy=v,
                )
            )
    return table


class TestPairedComparison:
    def test_builds_expected_pairs(self):
        res = paired_comparison(
            small_table(), "policy", "norm_aug", "extra_aug",
            holding=("dataset", "model", "approach"), n_resamples=200,
        )
        assert res.n_pairs == 4
        assert len(res.pairing_keys) == 4
        assert res.ci_low <= res.effect_size_d <= res.ci_high

    def test_missing_cell_named(self):
        table = small_table()
        broken = ResultTable([r for r in table if r.key.model != "m2" or r.key.policy != "extra_aug"])
        with pytest.raises(ValueError, match="m2"):
            paired_comparison(
                broken, "policy", "norm_aug", "extra_aug",
                holding=("dataset", "model", "approach"), n_resamples=50,
            )

    def test_unheld_varying_factor_rejected(self):
        with pytest.raises(ValueError, match="approach"):
            paired_comparison(
                small_table(), "policy", "norm_aug", "extra_aug",
                holding=("dataset", "model"), n_resamples=50,
            )
