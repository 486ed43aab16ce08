import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from retdebias import fairness
from retdebias.errors import InvalidArgumentError, UndefinedAUCError, UndefinedCellError

# published reference values: (proportion, n, half-width in percent)
GOLDEN_CI = [
    (0.730, 200, 6.15),
    (0.605, 200, 6.78),
    (0.785, 200, 5.69),
    (0.710, 200, 6.29),
    (0.720, 200, 6.22),
    (0.715, 200, 6.26),
    (0.350, 100, 9.35),
    (0.560, 100, 9.73),
    (0.580, 100, 9.67),
    (0.850, 100, 7.0),
    (0.860, 100, 6.8),
    (0.3848, 6291, 1.2),
]

GOLDEN_WELCH = [
    (0.730, 200, 0.605, 200, 2.670, 0.008, 0.005, 0.001),
    (0.785, 200, 0.710, 200, 1.729, 0.085, 0.005, 0.002),
    (0.720, 200, 0.715, 200, 0.111, 0.912, 0.005, 0.005),
]


@pytest.mark.parametrize("p,n,expected", GOLDEN_CI)
def test_binomial_ci_reproduces_published_margins(p, n, expected):
    ci = fairness.binomial_ci(p, n)
    assert abs(ci.half_width * 100 - expected) <= 0.02


def test_binomial_ci_degenerate_proportion():
    assert fairness.binomial_ci(0.0, 50).half_width == 0.0
    assert fairness.binomial_ci(1.0, 7).half_width == 0.0


def test_binomial_ci_rejects_zero_n():
    with pytest.raises(InvalidArgumentError):
        fairness.binomial_ci(0.5, 0)


@given(st.floats(min_value=0.0, max_value=1.0), st.integers(min_value=1, max_value=10000))
def test_ci_is_symmetric_about_p(p, n):
    ci = fairness.binomial_ci(p, n)
    assert ci.lo + ci.hi == pytest.approx(2 * p, abs=1e-12)


@pytest.mark.parametrize("p1,n1,p2,n2,t_exp,p_exp,t_tol,p_tol", GOLDEN_WELCH)
def test_welch_reproduces_published_statistics(p1, n1, p2, n2, t_exp, p_exp, t_tol, p_tol):
    res = fairness.welch_t_proportions(p1, n1, p2, n2)
    assert abs(res.t - t_exp) <= t_tol
    assert abs(res.p_two_sided - p_exp) <= p_tol


def test_welch_identical_groups():
    res = fairness.welch_t_proportions(0.4, 50, 0.4, 50)
    assert res.t == 0.0
    assert res.p_two_sided == pytest.approx(1.0, abs=1e-12)


def test_welch_rejects_out_of_range():
    with pytest.raises(InvalidArgumentError):
        fairness.welch_t_proportions(1.2, 10, 0.5, 10)


@given(
    st.floats(min_value=0.01, max_value=0.99),
    st.integers(min_value=2, max_value=500),
    st.floats(min_value=0.01, max_value=0.99),
    st.integers(min_value=2, max_value=500),
)
def test_welch_antisymmetry(p1, n1, p2, n2):
    a = fairness.welch_t_proportions(p1, n1, p2, n2)
    b = fairness.welch_t_proportions(p2, n2, p1, n1)
    assert a.t == pytest.approx(-b.t, abs=1e-12)
    assert a.p_two_sided == pytest.approx(b.p_two_sided, abs=1e-12)


def test_student_t_matches_scipy_to_1e10():
    for t in (0.05, 0.5, 1.0, 1.7284, 2.67, 5.0, 12.0):
        for df in (1.0, 2.5, 10.0, 99.0, 394.3, 5000.0):
            mine = fairness.student_t_p_two_sided(t, df)
            ref = 2 * scipy.stats.t.sf(t, df)
            assert abs(mine - ref) < 1e-10


def test_delta_parity_published_values():
    assert fairness.delta_parity(0.730, 0.605) == pytest.approx(0.125, abs=1e-12)
    assert fairness.delta_parity(0.720, 0.715) == pytest.approx(0.005, abs=1e-12)
    assert fairness.delta_parity(0.5, 0.5) == 0.0


def test_delta_parity_ci_published_interval():
    ci = fairness.delta_parity_ci(0.730, 200, 0.605, 200)
    assert abs(ci.half_width * 100 - 9.15) <= 0.05
    assert abs(ci.lo * 100 - 3.35) <= 0.05
    assert abs(ci.hi * 100 - 21.7) <= 0.05


def rec(score, actual, group):
    return fairness.record_from_score(score, actual, group)


def test_equal_gaps_zero_for_identical_group_behaviour():
    records = []
    for group in (False, True):
        records += [rec(0.9, True, group), rec(0.2, True, group)]
        records += [rec(0.1, False, group), rec(0.8, False, group)]
    assert fairness.equal_odds_gap(records) == 0.0
    assert fairness.equal_opportunity_gap(records) == 0.0


def test_equal_opportunity_hand_enumerated():
    # positives: group0 predictions 1,1,0,1; group1 predictions 1,0,0,0
    records = [
        rec(0.9, True, False), rec(0.8, True, False), rec(0.1, True, False), rec(0.7, True, False),
        rec(0.9, True, True), rec(0.2, True, True), rec(0.3, True, True), rec(0.1, True, True),
    ]
    # negatives with equal prediction frequency in both groups
    for group in (False, True):
        records += [rec(0.6, False, group), rec(0.1, False, group)]
    assert fairness.equal_opportunity_gap(records) == pytest.approx(0.5)
    assert fairness.equal_odds_gap(records) == pytest.approx(0.5)


def test_empty_cell_is_named():
    records = [rec(0.9, True, False), rec(0.1, False, False), rec(0.8, True, True)]
    with pytest.raises(UndefinedCellError) as err:
        fairness.equal_odds_gap(records)
    assert "A=1" in str(err.value) and "Y=0" in str(err.value)


def random_records(rng, n):
    out = []
    for _ in range(n):
        out.append(
            rec(
                float(rng.integers(0, 11)) / 10.0,
                bool(rng.integers(0, 2)),
                bool(rng.integers(0, 2)),
            )
        )
    return out


def has_full_cells(records):
    cells = {(r.group, r.actual) for r in records}
    return len(cells) == 4


def test_eq_opp_never_exceeds_eq_odds_on_1000_random_sets():
    rng = np.random.Generator(np.random.PCG64(2024))
    checked = 0
    while checked < 1000:
        records = random_records(rng, int(rng.integers(8, 40)))
        if not has_full_cells(records):
            continue
        assert fairness.equal_opportunity_gap(records) <= fairness.equal_odds_gap(records) + 1e-12
        checked += 1


def pairwise_auc(records):
    """O(n^2) Mann-Whitney oracle: ties between scores count one half."""
    pos = [r.score for r in records if r.actual]
    neg = [r.score for r in records if not r.actual]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_auc_perfect_separation():
    records = [rec(0.9, True, False), rec(0.8, True, False), rec(0.2, False, False)]
    _, auc = fairness.roc_points_auc(records)
    assert auc == 1.0


def test_auc_all_ties_is_half():
    records = [rec(0.5, True, False), rec(0.5, False, False), rec(0.5, True, False)]
    points, auc = fairness.roc_points_auc(records)
    assert auc == pytest.approx(0.5, abs=1e-15)
    assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)


def test_auc_matches_pairwise_oracle_on_random_sets():
    rng = np.random.Generator(np.random.PCG64(31337))
    done = 0
    while done < 50:
        records = random_records(rng, 20)
        if not any(r.actual for r in records) or all(r.actual for r in records):
            continue
        _, auc = fairness.roc_points_auc(records)
        assert auc == pytest.approx(pairwise_auc(records), abs=1e-12)
        done += 1


def test_auc_single_class_rejected():
    with pytest.raises(UndefinedAUCError):
        fairness.roc_points_auc([rec(0.9, True, False), rec(0.4, True, False)])


def test_auc_complement_under_label_flip():
    rng = np.random.Generator(np.random.PCG64(99))
    records = random_records(rng, 30)
    while not has_full_cells(records):
        records = random_records(rng, 30)
    _, auc = fairness.roc_points_auc(records)
    flipped = [
        fairness.PredictionRecord(r.score, r.predicted, not r.actual, r.group) for r in records
    ]
    _, auc_flipped = fairness.roc_points_auc(flipped)
    assert auc + auc_flipped == pytest.approx(1.0, abs=1e-12)


def make_confusion_records(group, sens_correct, n_pos, spec_correct, n_neg):
    """Records realizing an exact confusion matrix at threshold 0.5."""
    out = []
    for i in range(n_pos):
        out.append(rec(0.9 if i < sens_correct else 0.1, True, group))
    for i in range(n_neg):
        out.append(rec(0.1 if i < spec_correct else 0.9, False, group))
    return out


def baseline_reference_records():
    records = make_confusion_records(False, 85, 100, 61, 100)
    records += make_confusion_records(True, 35, 100, 86, 100)
    return records


def test_fairness_report_reproduces_published_baseline_row():
    report = fairness.fairness_report(baseline_reference_records())
    assert report.lighter.accuracy == pytest.approx(0.730)
    assert report.darker.accuracy == pytest.approx(0.605)
    assert report.lighter.sensitivity == pytest.approx(0.85)
    assert report.lighter.specificity == pytest.approx(0.61)
    assert report.darker.sensitivity == pytest.approx(0.35)
    assert report.darker.specificity == pytest.approx(0.86)
    assert report.delta_signed == pytest.approx(0.125)
    assert abs(report.welch.t - 2.670) <= 0.005
    assert abs(report.welch.p_two_sided - 0.008) <= 0.001
    assert report.accuracy_overall == pytest.approx(0.6675)


def test_report_confusion_consistency():
    report = fairness.fairness_report(baseline_reference_records())
    for g in (report.lighter, report.darker):
        lhs = g.sensitivity * g.n_pos + g.specificity * g.n_neg
        assert lhs == pytest.approx(g.accuracy * g.n, abs=1e-9)


def test_report_requires_both_groups():
    with pytest.raises(UndefinedCellError):
        fairness.fairness_report(make_confusion_records(False, 3, 5, 3, 5))


def test_record_score_range_enforced():
    with pytest.raises(InvalidArgumentError):
        fairness.PredictionRecord(1.5, True, True, False)
