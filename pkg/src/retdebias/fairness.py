"""Fairness evaluation machinery for a binary classifier over a binary
protected group.

Conventions, fixed so results are reproducible and comparable:

* group False = lighter, group True = darker; signed delta is
  accuracy(lighter) - accuracy(darker).
* Confidence intervals use the normal approximation with the n denominator;
  the Welch t-test for two proportions uses the n-1 Bernoulli sample
  variance. That split of conventions is deliberate and is the one that
  makes both kinds of published figures reproduce at once.
* The Student-t CDF is evaluated through the regularized incomplete beta
  function (continued fraction), with no large-df normal shortcut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, UndefinedAUCError, UndefinedCellError

Z_95 = 1.959964
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class PredictionRecord:
    score: float  # positive-class probability
    predicted: bool
    actual: bool
    group: bool  # False = lighter, True = darker

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidArgumentError("score must lie in [0, 1]")


def record_from_score(
    score: float, actual: bool, group: bool, threshold: float = DEFAULT_THRESHOLD
) -> PredictionRecord:
    return PredictionRecord(float(score), bool(score >= threshold), bool(actual), bool(group))


@dataclass(frozen=True)
class ConfidenceInterval:
    half_width: float
    lo: float
    hi: float


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_two_sided: float


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _z_for_level(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise InvalidArgumentError("confidence level must lie in (0, 1)")
    if abs(level - 0.95) < 1e-12:
        return Z_95
    target = 0.5 + level / 2.0
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _norm_cdf(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def binomial_ci(p: float, n: int, level: float = 0.95) -> ConfidenceInterval:
    """Normal-approximation interval for a proportion.

    half_width = z * sqrt(p(1-p)/n). lo/hi are not clamped here; clamping to
    the displayable range happens only at report rendering.
    """
    if n is None or int(n) < 1:
        raise InvalidArgumentError("n must be a positive integer")
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError("p must lie in [0, 1]")
    z = _z_for_level(level)
    half = z * math.sqrt(p * (1.0 - p) / int(n))
    return ConfidenceInterval(half, p - half, p + half)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz method."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), accurate to ~1e-12 over the parameter range used here."""
    if a <= 0.0 or b <= 0.0:
        raise InvalidArgumentError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_p_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t with (possibly fractional) df."""
    if df <= 0.0:
        raise InvalidArgumentError("df must be positive")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def welch_t_proportions(p1: float, n1: int, p2: float, n2: int) -> WelchResult:
    """Welch t-test treating two observed proportions as sample means.

    Per-group variance uses the n-1 Bernoulli sample variance
    se_i^2 = p_i (1 - p_i) / (n_i - 1); df by Welch-Satterthwaite.
    """
    for p in (p1, p2):
        if not 0.0 <= p <= 1.0:
            raise InvalidArgumentError("proportions must lie in [0, 1]")
    if n1 < 2 or n2 < 2:
        raise InvalidArgumentError("group sizes must be >= 2")
    se1_sq = p1 * (1.0 - p1) / (n1 - 1)
    se2_sq = p2 * (1.0 - p2) / (n2 - 1)
    pooled = se1_sq + se2_sq
    if pooled == 0.0:
        t = 0.0
        df = float(n1 + n2 - 2)
        return WelchResult(t, df, 1.0)
    t = (p1 - p2) / math.sqrt(pooled)
    df = pooled * pooled / (se1_sq**2 / (n1 - 1) + se2_sq**2 / (n2 - 1))
    return WelchResult(t, df, student_t_p_two_sided(t, df))


def delta_parity(acc_group0: float, acc_group1: float) -> float:
    """Signed accuracy difference, group0 (lighter) minus group1 (darker)."""
    for a in (acc_group0, acc_group1):
        if not 0.0 <= a <= 1.0:
            raise InvalidArgumentError("accuracies must lie in [0, 1]")
    return acc_group0 - acc_group1


def delta_parity_ci(
    acc0: float, n0: int, acc1: float, n1: int, level: float = 0.95
) -> ConfidenceInterval:
    """Normal-approximation interval for the signed accuracy difference."""
    if n0 < 1 or n1 < 1:
        raise InvalidArgumentError("group sizes must be >= 1")
    delta = delta_parity(acc0, acc1)
    z = _z_for_level(level)
    half = z * math.sqrt(acc0 * (1.0 - acc0) / n0 + acc1 * (1.0 - acc1) / n1)
    return ConfidenceInterval(half, delta - half, delta + half)


def _cell_rate(records: list[PredictionRecord], group: bool, actual: bool) -> float:
    cell = [r for r in records if r.group == group and r.actual == actual]
    if not cell:
        raise UndefinedCellError(f"(A={int(group)}, Y={int(actual)})")
    return sum(r.predicted for r in cell) / len(cell)


def equal_odds_gap(records: list[PredictionRecord]) -> float:
    """Max over true labels y and predicted labels of the between-group
    difference in empirical P(predicted | group, y)."""
    gap = 0.0
    for actual in (False, True):
        r0 = _cell_rate(records, False, actual)
        r1 = _cell_rate(records, True, actual)
        # for binary predictions the gap at predicted=0 equals the gap at 1
        gap = max(gap, abs(r0 - r1))
    return gap


def equal_opportunity_gap(records: list[PredictionRecord]) -> float:
    """The equal-odds condition restricted to the positive true label."""
    r0 = _cell_rate(records, False, True)
    r1 = _cell_rate(records, True, True)
    return abs(r0 - r1)


def roc_points_auc(records: list[PredictionRecord]):
    """ROC by descending unique-score sweep plus trapezoid AUC.

    The trapezoid value equals the Mann-Whitney statistic (tied pairs counted
    one half) exactly.
    """
    n_pos = sum(r.actual for r in records)
    n_neg = len(records) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("ROC needs at least one positive and one negative")
    ordered = sorted(records, key=lambda r: -r.score)
    points = [(0.0, 0.0)]
    auc = 0.0
    tp = fp = 0
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].score == ordered[i].score:
            tp += ordered[j].actual
            fp += not ordered[j].actual
            j += 1
        fpr, tpr = fp / n_neg, tp / n_pos
        auc += (fpr - points[-1][0]) * (tpr + points[-1][1]) / 2.0
        points.append((fpr, tpr))
        i = j
    return points, auc


@dataclass(frozen=True)
class GroupMetrics:
    n: int
    n_pos: int
    n_neg: int
    accuracy: float
    sensitivity: float
    specificity: float
    accuracy_ci: ConfidenceInterval
    sensitivity_ci: ConfidenceInterval
    specificity_ci: ConfidenceInterval
    auc: float
    roc: list[tuple[float, float]]


@dataclass(frozen=True)
class FairnessReport:
    n: int
    accuracy_overall: float
    accuracy_overall_ci: ConfidenceInterval
    lighter: GroupMetrics
    darker: GroupMetrics
    delta_signed: float
    delta_ci: ConfidenceInterval
    welch: WelchResult
    eq_odds_gap: float
    eq_opp_gap: float
    threshold: float


def group_metrics(records: list[PredictionRecord], level: float = 0.95) -> GroupMetrics:
    n = len(records)
    if n == 0:
        raise UndefinedCellError("(group with no records)")
    tp = sum(r.predicted and r.actual for r in records)
    tn = sum((not r.predicted) and (not r.actual) for r in records)
    n_pos = sum(r.actual for r in records)
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedCellError(f"(Y={int(n_pos == 0)} empty within group)")
    accuracy = (tp + tn) / n
    sensitivity = tp / n_pos
    specificity = tn / n_neg
    points, auc = roc_points_auc(records)
    return GroupMetrics(
        n=n,
        n_pos=n_pos,
        n_neg=n_neg,
        accuracy=accuracy,
        sensitivity=sensitivity,
        specificity=specificity,
        accuracy_ci=binomial_ci(accuracy, n, level),
        sensitivity_ci=binomial_ci(sensitivity, n_pos, level),
        specificity_ci=binomial_ci(specificity, n_neg, level),
        auc=auc,
        roc=points,
    )


def fairness_report(
    records: list[PredictionRecord],
    threshold: float = DEFAULT_THRESHOLD,
    level: float = 0.95,
) -> FairnessReport:
    """Full per-group evaluation of a prediction set."""
    if not records:
        raise InvalidArgumentError("no prediction records")
    lighter = group_metrics([r for r in records if not r.group], level)
    darker = group_metrics([r for r in records if r.group], level)
    n = len(records)
    correct = sum(r.predicted == r.actual for r in records)
    overall = correct / n
    delta = delta_parity(lighter.accuracy, darker.accuracy)
    return FairnessReport(
        n=n,
        accuracy_overall=overall,
        accuracy_overall_ci=binomial_ci(overall, n, level),
        lighter=lighter,
        darker=darker,
        delta_signed=delta,
        delta_ci=delta_parity_ci(lighter.accuracy, lighter.n, darker.accuracy, darker.n, level),
        welch=welch_t_proportions(lighter.accuracy, lighter.n, darker.accuracy, darker.n),
        eq_odds_gap=equal_odds_gap(records),
        eq_opp_gap=equal_opportunity_gap(records),
        threshold=threshold,
    )
