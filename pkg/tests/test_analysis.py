import math

import numpy as np
import pytest

from dropuq import (
    ErrorProfile,
    LabelSet,
    McPredictionSet,
    UncertaintyReport,
    UndefinedCorrelationError,
    ValidationError,
    build_report,
    confusion_matrix,
    error_profile,
    group_summary,
    one_hot,
    save_confusion,
    spearman_rho,
    summary_to_dict,
    wasserstein_discrete,
)


def test_one_hot_basic():
    assert list(one_hot(0, 2)) == [1.0, 0.0]
    assert list(one_hot(3, 4)) == [0.0, 0.0, 0.0, 1.0]
    with pytest.raises(ValidationError):
        one_hot(2, 2)


def test_wasserstein_identity():
    p = np.array([0.2, 0.3, 0.5])
    assert wasserstein_discrete(p, p) == 0.0


def test_wasserstein_extreme_corners():
    assert wasserstein_discrete([1, 0, 0, 0], [0, 0, 0, 1]) == pytest.approx(3.0, abs=1e-15)


def test_wasserstein_half_shift():
    assert wasserstein_discrete([0.5, 0.5], [0.0, 1.0]) == pytest.approx(0.5, abs=1e-15)


def test_wasserstein_rejects_bad_input():
    with pytest.raises(ValidationError):
        wasserstein_discrete([1.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(ValidationError):
        wasserstein_discrete([0.9, 0.0], [1.0, 0.0])


def random_simplex(rng, num_classes):
    p = rng.random(num_classes) + 1e-9
    return p / p.sum()


def test_wasserstein_metric_axioms():
    rng = np.random.default_rng(2)
    for _ in range(300):
        c = int(rng.integers(2, 6))
        p, q, r = (random_simplex(rng, c) for _ in range(3))
        d_pq = wasserstein_discrete(p, q)
        d_qp = wasserstein_discrete(q, p)
        assert d_pq >= 0
        assert d_pq == pytest.approx(d_qp, abs=1e-12)
        assert d_pq <= wasserstein_discrete(p, r) + wasserstein_discrete(r, q) + 1e-12
        assert wasserstein_discrete(p, p) == 0.0


def test_wasserstein_matches_transport_lp():
    # independent oracle: solve the transport linear program directly
    from scipy.optimize import linprog

    def lp_distance(p, q):
        c = len(p)
        cost = np.abs(np.subtract.outer(np.arange(c), np.arange(c))).ravel()
        a_eq = []
        for i in range(c):
            row = np.zeros((c, c))
            row[i, :] = 1
            a_eq.append(row.ravel())
        for j in range(c):
            col = np.zeros((c, c))
            col[:, j] = 1
            a_eq.append(col.ravel())
        result = linprog(cost, A_eq=np.array(a_eq), b_eq=np.concatenate([p, q]),
                         bounds=(0, None), method="highs")
        assert result.success
        return result.fun

    rng = np.random.default_rng(4)
    for _ in range(20):
        c = int(rng.integers(2, 6))
        p, q = random_simplex(rng, c), random_simplex(rng, c)
        assert wasserstein_discrete(p, q) == pytest.approx(lp_distance(p, q), abs=1e-9)


def test_spearman_perfectly_monotone():
    assert spearman_rho([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0, abs=1e-15)
    assert spearman_rho([1, 2, 3], [30, 20, 10]) == pytest.approx(-1.0, abs=1e-15)


def test_spearman_with_ties_matches_average_rank_oracle():
    # average-rank convention; value frozen from scipy.stats.spearmanr
    rho = spearman_rho([1, 2, 2, 4], [1, 3, 2, 4])
    assert rho == pytest.approx(0.9486832980505139, abs=1e-12)


def test_spearman_agrees_with_scipy_on_random_data():
    from scipy import stats

    rng = np.random.default_rng(6)
    for _ in range(50):
        n = int(rng.integers(3, 40))
        x = rng.integers(0, 6, size=n).astype(float)  # heavy ties
        y = x + rng.normal(0, 1.5, size=n)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        expected = stats.spearmanr(x, y).statistic
        assert spearman_rho(x, y) == pytest.approx(expected, abs=1e-12)


def test_spearman_invariant_under_monotone_transform():
    rng = np.random.default_rng(8)
    x = rng.normal(size=30)
    y = rng.normal(size=30)
    base = spearman_rho(x, y)
    assert spearman_rho(np.exp(x), y) == pytest.approx(base, abs=1e-12)
    assert spearman_rho(x, np.exp(y)) == pytest.approx(base, abs=1e-12)


def test_spearman_self_correlation():
    rng = np.random.default_rng(10)
    x = rng.normal(size=25)
    assert spearman_rho(x, x) == pytest.approx(1.0, abs=1e-12)
    assert spearman_rho(x, -x) == pytest.approx(-1.0, abs=1e-12)


def test_spearman_degenerate_inputs():
    with pytest.raises(UndefinedCorrelationError):
        spearman_rho([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(UndefinedCorrelationError):
        spearman_rho([1.0, 2.0, 3.0], [5.0, 5.0, 5.0])
    with pytest.raises(ValidationError):
        spearman_rho([1.0], [2.0])


def report_from(probs, ids=None):
    probs = np.asarray(probs, dtype=np.float64)
    if ids is None:
        ids = tuple(f"i{k}" for k in range(probs.shape[1]))
    return build_report(McPredictionSet(tuple(ids), probs))


def test_confusion_all_correct_is_diagonal():
    # one-hot passes: items 0,1 class 0; item 2 class 1
    probs = [[[1, 0], [1, 0], [0, 1]]]
    report = report_from(probs)
    labels = LabelSet(report.item_ids, np.array([0, 0, 1]))
    matrix = confusion_matrix(report, labels)
    assert matrix.counts.tolist() == [[2, 0], [0, 1]]
    assert matrix.accuracy() == 1.0


def test_confusion_single_error_position():
    probs = [[[1, 0]]]
    report = report_from(probs)
    matrix = confusion_matrix(report, LabelSet(report.item_ids, np.array([1])))
    assert matrix.counts.tolist() == [[0, 0], [1, 0]]


def test_confusion_total_and_accuracy_consistency():
    rng = np.random.default_rng(12)
    probs = rng.random((3, 20, 4)) + 1e-3
    probs /= probs.sum(axis=2, keepdims=True)
    report = report_from(probs)
    labels = LabelSet(report.item_ids, rng.integers(0, 4, size=20))
    matrix = confusion_matrix(report, labels)
    profile = error_profile(report, labels)
    assert matrix.counts.sum() == 20
    assert matrix.accuracy() == pytest.approx(profile.correct.mean(), abs=1e-15)


def test_error_profile_exact_one_hot_mean():
    report = report_from([[[0, 1, 0]]])
    profile = error_profile(report, LabelSet(report.item_ids, np.array([1])))
    assert profile.wd_error[0] == 0.0
    assert profile.correct[0]


def test_error_profile_known_values():
    report = report_from([[[0.6, 0.4]]])
    profile = error_profile(report, LabelSet(report.item_ids, np.array([1])))
    assert profile.wd_error[0] == pytest.approx(0.6, abs=1e-12)
    assert not profile.correct[0]

    report4 = report_from([[[0.25] * 4]])
    profile4 = error_profile(report4, LabelSet(report4.item_ids, np.array([0])))
    assert profile4.wd_error[0] == pytest.approx(1.5, abs=1e-12)


def test_error_profile_bounded_by_c_minus_one():
    rng = np.random.default_rng(14)
    probs = rng.random((2, 30, 5)) + 1e-3
    probs /= probs.sum(axis=2, keepdims=True)
    report = report_from(probs)
    labels = LabelSet(report.item_ids, rng.integers(0, 5, size=30))
    profile = error_profile(report, labels)
    assert (profile.wd_error <= 4 + 1e-12).all()
    assert (profile.wd_error >= 0).all()


def test_error_profile_requires_alignment():
    report = report_from([[[1, 0]]])
    with pytest.raises(ValidationError):
        error_profile(report, LabelSet(("other",), np.array([0])))


def _tiny_report(ph_norm, bald_norm):
    n = len(ph_norm)
    return UncertaintyReport(
        item_ids=tuple(f"i{k}" for k in range(n)),
        predictive_mean=np.full((n, 2), 0.5),
        predicted_class=np.zeros(n, dtype=np.int64),
        entropy_ph=np.asarray(ph_norm) * math.log(2),
        expected_entropy=np.zeros(n),
        bald=np.asarray(bald_norm) * math.log(2),
        entropy_ph_norm=np.asarray(ph_norm, dtype=np.float64),
        bald_norm=np.asarray(bald_norm, dtype=np.float64),
    )


def test_group_summary_mean_difference():
    report = _tiny_report([0.1, 0.5], [0.2, 0.3])
    profile = ErrorProfile(report.item_ids, np.array([0.0, 1.0]), np.array([True, False]))
    summary = group_summary(report, profile)
    assert summary.correct.count == 1
    assert summary.erroneous.count == 1
    assert summary.ph_mean_diff == pytest.approx(0.4, abs=1e-12)
    assert summary.bald_mean_diff == pytest.approx(0.1, abs=1e-12)


def test_group_summary_absent_group():
    report = _tiny_report([0.1, 0.2], [0.0, 0.0])
    profile = ErrorProfile(report.item_ids, np.zeros(2), np.array([True, True]))
    summary = group_summary(report, profile)
    assert summary.erroneous is None
    assert summary.ph_mean_diff is None
    payload = summary_to_dict(summary)
    assert payload["erroneous"] is None
    assert payload["correct"]["count"] == 2


def test_group_summary_matches_recomputation():
    rng = np.random.default_rng(16)
    probs = rng.random((4, 25, 3)) + 1e-3
    probs /= probs.sum(axis=2, keepdims=True)
    report = report_from(probs)
    labels = LabelSet(report.item_ids, rng.integers(0, 3, size=25))
    profile = error_profile(report, labels)
    summary = group_summary(report, profile)
    mask = profile.correct
    assert summary.correct.ph_mean == pytest.approx(report.entropy_ph_norm[mask].mean(), abs=1e-15)
    assert summary.erroneous.bald_std == pytest.approx(report.bald_norm[~mask].std(), abs=1e-15)
    assert summary.correct.ph_median == pytest.approx(np.median(report.entropy_ph_norm[mask]), abs=1e-15)


def test_save_confusion_format(tmp_path):
    report = report_from([[[1, 0], [0, 1]]])
    labels = LabelSet(report.item_ids, np.array([0, 0]))
    path = tmp_path / "confusion.csv"
    save_confusion(confusion_matrix(report, labels), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "0,1"
    assert lines[1] == "1,1"
    assert lines[2] == "0,0"
