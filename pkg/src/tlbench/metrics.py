"""Balanced accuracy and the paired statistics over result tables.

The signed-rank statistic follows the min-rank-sum convention (zero
differences dropped, tied absolute differences share their average rank);
the reported magnitudes in the source tables are only consistent with a
rank sum, not a normal deviate. The paired effect size follows the
estimation-statistics convention: mean paired difference divided by the
average standard deviation of the two conditions, sqrt((s_a^2 + s_b^2)/2).
Confidence intervals are bias-corrected-and-accelerated bootstrap at 95%.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, rankdata

from .results import FACTORS, ResultTable

__all__ = [
    "ConfusionMatrix",
    "PairedSamples",
    "StatResult",
    "confusion",
    "balanced_accuracy",
    "signed_rank_statistic",
    "wilcoxon_signed_rank",
    "cohens_d_paired",
    "bootstrap_ci",
    "paired_comparison",
    "UndefinedTestError",
]


class UndefinedTestError(ValueError):
    """The requested statistic is undefined on the given data."""


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray
    classes: tuple

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {c.shape}")
        if c.shape[0] < 2:
            raise ValueError("confusion matrix needs at least two classes")
        if (c < 0).any():
            raise ValueError("confusion matrix entries must be non-negative")
        if len(self.classes) != c.shape[0]:
            raise ValueError("class list length must match matrix size")


def confusion(true_labels, predicted_labels, classes) -> ConfusionMatrix:
    """Count matrix with rows = true class, columns = predicted class."""
    true_labels = list(true_labels)
    predicted_labels = list(predicted_labels)
    if len(true_labels) != len(predicted_labels):
        raise ValueError(
            f"label sequences differ in length: {len(true_labels)} vs {len(predicted_labels)}"
        )
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        if t not in index:
            raise ValueError(f"unknown true label {t!r}")
        if p not in index:
            raise ValueError(f"unknown predicted label {p!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts=counts, classes=classes)


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """Mean per-class recall over classes with support.

    Zero-support classes are excluded with a warning; all-zero input is an
    error.
    """
    counts = np.asarray(cm.counts, dtype=np.float64)
    support = counts.sum(axis=1)
    if not (support > 0).any():
        raise ValueError("balanced accuracy undefined: no class has support")
    if (support == 0).any():
        skipped = [c for c, s in zip(cm.classes, support) if s == 0]
        warnings.warn(f"excluding zero-support classes {skipped} from balanced accuracy")
    mask = support > 0
    recalls = np.diag(counts)[mask] / support[mask]
    return float(recalls.mean())


@dataclass(frozen=True)
class PairedSamples:
    """Two aligned measurement sequences, keyed by experimental cell."""

    a: np.ndarray
    b: np.ndarray
    keys: tuple = ()

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError(f"paired samples must be equal-length 1-D, got {a.shape}, {b.shape}")
        if len(a) < 1:
            raise ValueError("paired samples must be non-empty")
        if self.keys and len(self.keys) != len(a):
            raise ValueError("alignment keys must match sample length")

    @property
    def differences(self) -> np.ndarray:
        return self.b - self.a

    def __len__(self) -> int:
        return len(self.a)


@dataclass(frozen=True)
class StatResult:
    statistic: float
    p_value: float
    effect_size_d: float = math.nan
    ci_low: float = math.nan
    ci_high: float = math.nan
    n_resamples: int = 0
    n_pairs: int = 0
    pairing_keys: tuple = ()
    notes: tuple = field(default_factory=tuple)


def signed_rank_statistic(
    differences, zero_method: str = "drop", tie_method: str = "average"
) -> tuple[float, float, int]:
    """(W_plus, W_minus, n_used) under an explicit convention.

    ``zero_method``: drop (rank after removing zeros), pratt (rank with
    zeros, then discard their ranks) or zsplit (split zero ranks evenly).
    ``tie_method``: average or ordinal rank assignment for tied |d|.
    """
    d = np.asarray(differences, dtype=np.float64)
    if zero_method == "drop":
        d_used = d[d != 0]
        ranks = rankdata(np.abs(d_used), method=tie_method)
        w_plus = float(ranks[d_used > 0].sum())
        w_minus = float(ranks[d_used < 0].sum())
        return w_plus, w_minus, len(d_used)
    if zero_method in ("pratt", "zsplit"):
        ranks = rankdata(np.abs(d), method=tie_method)
        w_plus = float(ranks[d > 0].sum())
        w_minus = float(ranks[d < 0].sum())
        if zero_method == "zsplit":
            half = float(ranks[d == 0].sum()) / 2.0
            w_plus += half
            w_minus += half
        return w_plus, w_minus, int(np.count_nonzero(d))
    raise ValueError(f"unknown zero_method {zero_method!r}")


def _exact_signed_rank_p(ranks: np.ndarray, w_obs: float, alternative: str) -> float:
    """Exact p by enumerating all sign assignments of the rank vector."""
    n = len(ranks)
    w_all = np.zeros(1)
    for r in ranks:
        w_all = np.concatenate([w_all, w_all + r])
    total = float(ranks.sum())
    count = len(w_all)
    if alternative == "greater":  # b > a, so W- should be small
        return float(np.sum(w_all >= w_obs)) / count
    if alternative == "less":
        return float(np.sum(w_all <= w_obs)) / count
    lower = float(np.sum(w_all <= min(w_obs, total - w_obs)))
    upper = float(np.sum(w_all >= max(w_obs, total - w_obs)))
    return min(1.0, (lower + upper) / count)


def wilcoxon_signed_rank(pairs: PairedSamples, alternative: str = "two-sided") -> StatResult:
    """Signed-rank test over paired differences.

    The statistic is min(W+, W-). Zero differences are dropped; tied
    absolute differences take average ranks. The p-value uses exact sign
    enumeration for n <= 12 and the normal approximation with the tie
    correction otherwise.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = pairs.differences
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise UndefinedTestError("all paired differences are zero")
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)

    if n <= 12:
        if alternative == "greater":
            p = _exact_signed_rank_p(ranks, w_plus, "greater")
        elif alternative == "less":
            p = _exact_signed_rank_p(ranks, w_plus, "less")
        else:
            p = _exact_signed_rank_p(ranks, statistic, "two-sided")
    else:
        # Normal approximation with tie correction and the continuity
        # correction (needed for <=0.02 agreement with the exact tail).
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        tie_term = float(((tie_counts**3 - tie_counts).sum())) / 48.0
        sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
        if sigma == 0:
            raise UndefinedTestError("zero variance rank distribution")
        if alternative == "greater":
            p = float(norm.sf((w_plus - mean - 0.5) / sigma))
        elif alternative == "less":
            p = float(norm.cdf((w_plus - mean + 0.5) / sigma))
        else:
            z = (statistic - mean + 0.5) / sigma
            p = float(min(1.0, 2.0 * norm.cdf(z)))
    return StatResult(statistic=statistic, p_value=p, n_pairs=len(pairs))


def cohens_d_paired(pairs: PairedSamples) -> float:
    """Paired effect size: mean difference over the average-variance SD.

    d = mean(b - a) / sqrt((var(a) + var(b)) / 2), sample variances. This
    is the paired convention of the estimation-statistics package used for
    the source analyses; its published effect sizes are only reproducible
    with this denominator.
    """
    if len(pairs) < 2:
        raise ValueError("paired effect size needs at least two pairs")
    d = pairs.differences
    if float(np.var(d)) == 0.0:
        raise ValueError("paired effect size undefined: zero difference variance")
    denom = math.sqrt((float(np.var(pairs.a, ddof=1)) + float(np.var(pairs.b, ddof=1))) / 2.0)
    if denom == 0.0:
        raise ValueError("paired effect size undefined: both conditions constant")
    return float(d.mean()) / denom


def bootstrap_ci(
    pairs: PairedSamples,
    statistic,
    n_resamples: int = 5000,
    seed: int = 0,
    confidence: float = 0.95,
) -> tuple[float, float]:
    """BCa bootstrap interval for a paired statistic.

    ``statistic`` is called as statistic(a, b) on index-resampled pairs;
    resamples where it returns nan (or raises ValueError, e.g. on a
    degenerate draw) are discarded. Deterministic given the seed. A
    degenerate resample distribution collapses to a point interval.
    """
    if n_resamples < 1:
        raise ValueError("n_resamples must be >= 1")

    def safe(x, y):
        try:
            return float(statistic(x, y))
        except ValueError:
            return math.nan

    a, b = pairs.a, pairs.b
    n = len(pairs)
    rng = np.random.default_rng(seed)
    theta_hat = safe(a, b)
    if math.isnan(theta_hat):
        raise ValueError("statistic undefined on the full sample")
    idx = rng.integers(0, n, size=(n_resamples, n))
    thetas = np.array([safe(a[i], b[i]) for i in idx])
    thetas = thetas[np.isfinite(thetas)]
    if len(thetas) == 0:
        raise ValueError("statistic undefined on every resample")

    if np.all(thetas == thetas[0]):
        return float(thetas[0]), float(thetas[0])

    # Bias correction: share of resamples below the point estimate.
    m = len(thetas)
    prop = (np.sum(thetas < theta_hat) + 0.5 * np.sum(thetas == theta_hat)) / m
    prop = min(max(prop, 1.0 / (2 * m)), 1.0 - 1.0 / (2 * m))
    z0 = float(norm.ppf(prop))

    # Acceleration from the jackknife.
    acc = 0.0
    if n > 1:
        keep = np.arange(n)
        jack = np.array([safe(a[keep != i], b[keep != i]) for i in range(n)])
        jack = jack[np.isfinite(jack)]
        if len(jack) > 1:
            dev = jack.mean() - jack
            denom = 6.0 * float(np.sum(dev**2)) ** 1.5
            acc = float(np.sum(dev**3)) / denom if denom > 0 else 0.0

    alpha = (1.0 - confidence) / 2.0
    lo_hi = []
    for a_level in (alpha, 1.0 - alpha):
        z = float(norm.ppf(a_level))
        adj = norm.cdf(z0 + (z0 + z) / (1.0 - acc * (z0 + z)))
        lo_hi.append(float(np.quantile(thetas, min(max(adj, 0.0), 1.0))))
    return min(lo_hi), max(lo_hi)


def build_pairs(
    table: ResultTable,
    factor: str,
    level_a: str,
    level_b: str,
    holding,
) -> PairedSamples:
    """Align table rows into pairs keyed by the held factors.

    Factors outside ``holding`` (and the compared factor) must be constant
    within the restricted table; otherwise the pairing is ambiguous.
    """
    if factor not in FACTORS:
        raise KeyError(f"unknown factor {factor!r}")
    holding = tuple(holding)
    restricted = table.select(**{factor: (level_a, level_b)})
    if len(restricted) == 0:
        raise ValueError(f"no rows with {factor} in ({level_a!r}, {level_b!r})")
    for other in FACTORS:
        if other == factor or other in holding:
            continue
        levels = restricted.levels(other)
        if len(levels) > 1:
            raise ValueError(
                f"factor {other!r} varies over {levels} but is neither held nor compared"
            )

    combos = [restricted.levels(h) for h in holding]
    keys, va, vb = [], [], []
    for combo in itertools.product(*combos):
        sel = dict(zip(holding, combo))
        rows_a = list(restricted.select(**sel, **{factor: level_a}))
        rows_b = list(restricted.select(**sel, **{factor: level_b}))
        if not rows_a and not rows_b:
            continue  # combination absent entirely: not part of the grid
        if len(rows_a) != 1 or len(rows_b) != 1:
            raise ValueError(f"missing or ambiguous cell for pairing key {sel}")
        keys.append(combo)
        va.append(rows_a[0].balanced_accuracy)
        vb.append(rows_b[0].balanced_accuracy)
    if not keys:
        raise ValueError("no complete pairs found")
    return PairedSamples(a=np.array(va), b=np.array(vb), keys=tuple(keys))


def paired_comparison(
    table: ResultTable,
    factor: str,
    level_a: str,
    level_b: str,
    holding,
    n_resamples: int = 5000,
    seed: int = 0,
) -> StatResult:
    """Signed-rank test, paired effect size and BCa interval for
    level_b vs level_a of one factor, pairing rows by the held factors."""
    pairs = build_pairs(table, factor, level_a, level_b, holding)
    w = wilcoxon_signed_rank(pairs)
    d = cohens_d_paired(pairs)

    def d_stat(x, y):
        return cohens_d_paired(PairedSamples(a=x, b=y))

    ci_low, ci_high = bootstrap_ci(pairs, d_stat, n_resamples=n_resamples, seed=seed)
    return StatResult(
        statistic=w.statistic,
        p_value=w.p_value,
        effect_size_d=d,
        ci_low=ci_low,
        ci_high=ci_high,
        n_resamples=n_resamples,
        n_pairs=len(pairs),
        pairing_keys=pairs.keys,
        notes=(f"pairing: {factor} {level_b} vs {level_a} holding {tuple(holding)}",),
    )
