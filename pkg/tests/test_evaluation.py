import math

import numpy as np
import pytest

from app.core.errors import LengthMismatch, MissingClass, SingleClass, UndefinedRate, ZeroVariance
from app.core.evaluation import (
    ConfusionMatrix2,
    _mean,
    auc,
    binary_rates,
    comparison_table,
    confusion_binary,
    eer_threshold,
    one_vs_rest_report,
    regression_metrics,
    report_dict,
    report_frame,
    roc_curve,
    summary_row,
)
from app.models.records import CLASS_VALUES


def mann_whitney(scores, truth):
    pos = [s for s, t in zip(scores, truth) if t]
    neg = [s for s, t in zip(scores, truth) if not t]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def tied_problem(seed=0, n=200):
    rng = np.random.default_rng(seed)
    truth = rng.random(n) < 0.3
    scores = np.round(rng.random(n) * 0.6 + 0.3 * truth, 1)
    return scores, truth


def small_problem(seed):
    """2 to 50 samples with both classes; even seeds use a coarse score grid so ties occur"""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    truth = rng.random(n) < rng.uniform(0.2, 0.8)
    truth[0], truth[-1] = True, False
    scores = rng.random(n) + 0.3 * truth
    if seed % 2 == 0:
        scores = np.round(scores, 1)
    return scores, truth


@pytest.mark.parametrize("seed", range(200))
def test_auc_equals_pairwise_ranking(seed):
    scores, truth = small_problem(seed)
    assert auc(roc_curve(scores, truth)) == pytest.approx(mann_whitney(scores, truth), abs=1e-9)


def test_auc_agrees_with_scikit_learn():
    metrics = pytest.importorskip("sklearn.metrics")
    scores, truth = tied_problem(7)
    assert auc(roc_curve(scores, truth)) == pytest.approx(metrics.roc_auc_score(truth, scores), abs=1e-12)


def test_perfect_and_reversed_scores():
    truth = np.array([0, 0, 1, 1], dtype=bool)
    assert auc(roc_curve([0.1, 0.2, 0.8, 0.9], truth)) == 1.0
    assert auc(roc_curve([0.9, 0.8, 0.2, 0.1], truth)) == 0.0
    assert auc(roc_curve([0.5, 0.5, 0.5, 0.5], truth)) == 0.5


def test_roc_endpoints_and_monotonicity():
    scores, truth = tied_problem(3)
    curve = roc_curve(scores, truth)
    assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0)
    assert (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)
    assert math.isinf(curve.thresholds[0])
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert np.all(np.diff(curve.thresholds) < 0)
    assert len(curve) == len(np.unique(scores)) + 1


def test_roc_rejects_single_class_and_length_mismatch():
    with pytest.raises(SingleClass):
        roc_curve([0.1, 0.2], [True, True])
    with pytest.raises(LengthMismatch):
        roc_curve([0.1, 0.2, 0.3], [True, False])


def test_eer_interpolates_between_vertices():
    point = eer_threshold(roc_curve([0.9, 0.5, 0.5], [False, True, False]))
    assert point.threshold == pytest.approx(0.9 - 0.4 / 3, abs=1e-12)
    assert point.vertex == 1
    assert point.tpr == pytest.approx(1.0 / 3.0)
    assert point.tpr == pytest.approx(1.0 - point.fpr, abs=1e-12)


def test_eer_on_an_exact_vertex():
    point = eer_threshold(roc_curve([0.9, 0.8, 0.7, 0.6], [True, False, True, False]))
    assert point.threshold == 0.8
    assert point.vertex == 2
    assert (point.fpr, point.tpr) == (0.5, 0.5)


def rates_at(scores, truth, threshold):
    flags = np.asarray(scores) >= threshold
    return (flags & truth).sum() / truth.sum(), (flags & ~truth).sum() / (~truth).sum()


def best_eer_gap(scores, truth):
    """Smallest |TPR - (1 - FPR)| over every score used as a cut"""
    gaps = [abs(tpr - (1.0 - fpr)) for tpr, fpr in (rates_at(scores, truth, t) for t in np.unique(scores))]
    return min(gaps)


@pytest.mark.parametrize("seed", range(50))
def test_eer_vertex_is_the_best_cut(seed):
    scores, truth = small_problem(seed)
    curve = roc_curve(scores, truth)
    point = eer_threshold(curve)
    tpr, fpr = rates_at(scores, truth, point.vertex_threshold(curve))
    assert (tpr, fpr) == (curve.tpr[point.vertex], curve.fpr[point.vertex])
    assert abs(tpr - (1.0 - fpr)) == pytest.approx(best_eer_gap(scores, truth), abs=1e-12)


def test_eer_gap_is_small_on_large_samples():
    rng = np.random.default_rng(5)
    truth = rng.random(3000) < 0.3
    scores = rng.normal(size=3000) + truth
    curve = roc_curve(scores, truth)
    tpr, fpr = rates_at(scores, truth, eer_threshold(curve).vertex_threshold(curve))
    assert abs(tpr - (1.0 - fpr)) <= 0.02


def test_report_rows_reproduce_their_confusion():
    for seed in range(200):
        rng = np.random.default_rng(seed)
        truth = rng.choice(CLASS_VALUES, 12)
        truth[:3] = CLASS_VALUES
        scores = np.round(rng.random((12, 3)), 1)
        report = one_vs_rest_report(scores, truth)
        for k, row in enumerate(report.classes):
            flags = truth == row.label
            assert confusion_binary(scores[:, k] >= row.threshold, flags) == row.confusion, f"seed {seed}"
            assert abs(row.tpr - (1.0 - row.fpr)) == pytest.approx(best_eer_gap(scores[:, k], flags), abs=1e-12)
            assert row.crossing_threshold is not None


def test_confusion_and_rates():
    cm = confusion_binary([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert cm == ConfusionMatrix2(tp=2, fp=1, fn=1, tn=1)
    rates = binary_rates(cm)
    assert rates.tpr == pytest.approx(2 / 3)
    assert rates.fpr == pytest.approx(0.5)
    assert rates.precision == pytest.approx(0.5)
    assert rates.precision_ppv == pytest.approx(2 / 3)
    assert rates.specificity_like == rates.precision


def test_undefined_rates():
    rates = binary_rates(ConfusionMatrix2(tp=0, fp=0, fn=0, tn=5))
    assert rates.tpr is None and rates.precision_ppv is None
    assert rates.fpr == 0.0
    with pytest.raises(UndefinedRate):
        binary_rates(ConfusionMatrix2(tp=0, fp=0, fn=0, tn=5), strict=True)


def one_hot(truth):
    return (np.asarray(truth)[:, None] == np.array(CLASS_VALUES)).astype(float)


def test_perfect_model_report():
    truth = np.array([0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 0.0])
    report = one_vs_rest_report(one_hot(truth), truth)
    for r in report.classes:
        assert r.auc == 1.0 and r.tpr == 1.0 and r.fpr == 0.0
    assert report.micro.auc == 1.0
    assert report.micro.false_alarm_rate == 0.0
    assert report.micro.precision == 1.0
    assert report.macro.auc == 1.0 and report.weighted.auc == 1.0
    assert report.warnings == []


def test_micro_pools_every_binarized_problem():
    rng = np.random.default_rng(4)
    truth = rng.choice(CLASS_VALUES, 60)
    scores = rng.random((60, 3))
    report = one_vs_rest_report(scores, truth)
    pooled = auc(roc_curve(scores.T.reshape(-1), one_hot(truth).T.reshape(-1).astype(bool)))
    assert report.headline_auc == pytest.approx(pooled, abs=1e-12)
    cm = sum((r.confusion for r in report.classes), ConfusionMatrix2(0, 0, 0, 0))
    assert cm.total == 3 * 60
    assert report.micro.false_alarm_rate == pytest.approx(cm.fp / (cm.fp + cm.tn))
    assert report.macro.auc == pytest.approx(np.mean([r.auc for r in report.classes]))
    weights = [r.support / 60 for r in report.classes]
    assert report.weighted.auc == pytest.approx(sum(w * r.auc for w, r in zip(weights, report.classes)))


def test_missing_class_is_left_out():
    truth = np.array([0.0, 0.0, 1.0, 1.0, 0.0])
    scores = np.random.default_rng(1).random((5, 3))
    report = one_vs_rest_report(scores, truth)
    assert len(report.warnings) == 1
    assert report.classes[1].missing and report.classes[1].support == 0
    assert report.macro.auc == pytest.approx((report.classes[0].auc + report.classes[2].auc) / 2)
    with pytest.raises(MissingClass):
        one_vs_rest_report(scores, truth, strict=True)


def test_mean_skips_undefined_values():
    assert _mean([0.88, 0.82, 0.95]) == pytest.approx(0.883333, abs=1e-6)
    assert _mean([0.88, None, 0.95]) == pytest.approx(0.915)
    assert _mean([0.5, 1.0], [3, 1]) == pytest.approx(0.625)
    assert _mean([None, None]) is None


def test_regression_identities():
    observed = np.array([0.0, 0.5, 1.0, 0.0, 0.5])
    m = regression_metrics([0.2, 0.7, 0.8, 0.0, 0.5], observed)
    assert m.mse == pytest.approx(0.024)
    assert m.rmse == pytest.approx(0.1549, abs=1e-4)
    assert m.rmse ** 2 == pytest.approx(m.mse)
    assert m.r == pytest.approx(math.sqrt(1 - 0.12 / 0.7))

    assert regression_metrics(observed, observed).r == 1.0
    assert regression_metrics(np.full(5, observed.mean()), observed).r == pytest.approx(0.0, abs=1e-7)

    worse = regression_metrics(1.0 - observed, observed)
    assert worse.clamped and worse.r == 0.0


def test_regression_constant_observed():
    assert regression_metrics([0.1, 0.2], [0.5, 0.5]).r is None
    with pytest.raises(ZeroVariance):
        regression_metrics([0.1, 0.2], [0.5, 0.5], strict=True)
    with pytest.raises(LengthMismatch):
        regression_metrics([0.1], [0.5, 0.5])


def test_report_tables():
    truth = np.array([0.0, 0.5, 1.0, 0.0, 0.5, 1.0])
    scores = np.random.default_rng(2).random((6, 3))
    report = one_vs_rest_report(scores, truth)
    report.regression = regression_metrics(scores[:, 2], truth)
    frame = report_frame(report)
    assert frame["row"].tolist() == ["0.0", "0.5", "1.0", "micro", "macro", "weighted"]
    assert frame["support"].tolist() == [2, 2, 2, 6, 6, 6]
    as_dict = report_dict(report)
    assert set(as_dict["classes"]) == {"0.0", "0.5", "1.0"}
    assert as_dict["regression"]["mse"] == pytest.approx(report.regression.mse)

    table = comparison_table([summary_row(report, "cnn"), summary_row(report, "tree")])
    assert list(table.columns) == ["model", "auc", "false_alarm_rate", "precision", "mse", "rmse", "r"]
    assert table["model"].tolist() == ["cnn", "tree"]
    assert table["auc"].iloc[0] == pytest.approx(report.micro.auc)
