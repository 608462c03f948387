"""Prediction-error quantification and its relation to uncertainty.

Per-item error is the exact 1-Wasserstein distance between the predictive
mean and the one-hot ground truth, with ground metric |i - j| over class
indices; for distributions on an ordered finite set this is the sum of
absolute CDF differences, so no transport solver is needed. Association
between uncertainty and error is measured by Spearman rank correlation with
average ranks for ties.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedCorrelationError, ValidationError
from .mc_store import LabelSet
from .metrics import UncertaintyReport


def one_hot(label: int, num_classes: int) -> np.ndarray:
    """Degenerate distribution with all mass on ``label``."""
    if not 0 <= label < num_classes:
        raise ValidationError(f"label {label} out of range for {num_classes} classes")
    vec = np.zeros(num_classes)
    vec[label] = 1.0
    return vec


def wasserstein_discrete(p, q) -> float:
    """Exact 1-Wasserstein distance between two distributions on {0..C-1}.

    Equals sum_k |F_p(k) - F_q(k)| over k < C-1, where F is the CDF.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValidationError(f"distributions must be equal-length vectors, got {p.shape} and {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if (v < 0).any() or abs(float(v.sum()) - 1.0) > 1e-6:
            raise ValidationError(f"{name} is not a distribution")
    return float(np.abs(np.cumsum(p - q)[:-1]).sum())


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values receive the mean of the ranks they span."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of average-ranked values."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError(f"inputs must be equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValidationError("need at least 2 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("correlation is undefined for a constant input")
    rx = _average_ranks(x) - (len(x) + 1) / 2.0
    ry = _average_ranks(y) - (len(y) + 1) / 2.0
    rho = float(np.dot(rx, ry) / np.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))
    return min(1.0, max(-1.0, rho))


@dataclass(frozen=True)
class ErrorProfile:
    """Per-item transport error and correctness flags."""

    item_ids: tuple[str, ...]
    wd_error: np.ndarray
    correct: np.ndarray


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[true][pred] over all items."""

    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())


def _check_aligned(report: UncertaintyReport, labels: LabelSet) -> None:
    if report.item_ids != labels.item_ids:
        raise ValidationError("report and labels are not aligned; align() them first")
    if (labels.labels >= report.num_classes).any():
        raise ValidationError(f"labels exceed the report's {report.num_classes} classes")


def confusion_matrix(report: UncertaintyReport, labels: LabelSet) -> ConfusionMatrix:
    """C x C counts with rows indexed by true class, columns by predicted class."""
    _check_aligned(report, labels)
    c = report.num_classes
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (labels.labels, report.predicted_class), 1)
    return ConfusionMatrix(counts)


def error_profile(report: UncertaintyReport, labels: LabelSet) -> ErrorProfile:
    """Transport error of the predictive mean against each item's one-hot truth."""
    _check_aligned(report, labels)
    wd = np.array([
        wasserstein_discrete(report.predictive_mean[n], one_hot(int(labels.labels[n]), report.num_classes))
        for n in range(report.num_items)
    ])
    return ErrorProfile(
        item_ids=report.item_ids,
        wd_error=wd,
        correct=report.predicted_class == labels.labels,
    )


@dataclass(frozen=True)
class GroupStats:
    count: int
    ph_mean: float
    ph_median: float
    ph_std: float
    bald_mean: float
    bald_median: float
    bald_std: float


@dataclass(frozen=True)
class GroupSummary:
    """Normalized-uncertainty statistics grouped by prediction correctness.

    A group with no items has ``None`` stats; the mean differences are
    erroneous minus correct and ``None`` when either group is empty.
    """

    correct: GroupStats | None
    erroneous: GroupStats | None
    ph_mean_diff: float | None
    bald_mean_diff: float | None


def _group_stats(ph: np.ndarray, mi: np.ndarray) -> GroupStats | None:
    if len(ph) == 0:
        return None
    return GroupStats(
        count=len(ph),
        ph_mean=float(ph.mean()),
        ph_median=float(np.median(ph)),
        ph_std=float(ph.std()),
        bald_mean=float(mi.mean()),
        bald_median=float(np.median(mi)),
        bald_std=float(mi.std()),
    )


def group_summary(report: UncertaintyReport, profile: ErrorProfile) -> GroupSummary:
    """Summarize normalized PH and BALD for correct vs erroneous predictions."""
    if report.item_ids != profile.item_ids:
        raise ValidationError("report and profile are not aligned")
    mask = profile.correct
    good = _group_stats(report.entropy_ph_norm[mask], report.bald_norm[mask])
    bad = _group_stats(report.entropy_ph_norm[~mask], report.bald_norm[~mask])
    diff_ph = diff_bald = None
    if good is not None and bad is not None:
        diff_ph = bad.ph_mean - good.ph_mean
        diff_bald = bad.bald_mean - good.bald_mean
    return GroupSummary(correct=good, erroneous=bad, ph_mean_diff=diff_ph, bald_mean_diff=diff_bald)


def summary_to_dict(summary: GroupSummary) -> dict:
    """JSON-ready form of a group summary."""
    def stats_dict(stats: GroupStats | None):
        if stats is None:
            return None
        return {
            "count": stats.count,
            "ph_mean": stats.ph_mean,
            "ph_median": stats.ph_median,
            "ph_std": stats.ph_std,
            "bald_mean": stats.bald_mean,
            "bald_median": stats.bald_median,
            "bald_std": stats.bald_std,
        }

    return {
        "correct": stats_dict(summary.correct),
        "erroneous": stats_dict(summary.erroneous),
        "ph_mean_diff": summary.ph_mean_diff,
        "bald_mean_diff": summary.bald_mean_diff,
    }


def save_confusion(matrix: ConfusionMatrix, path) -> None:
    """Confusion CSV: header of predicted-class indices, one row per true class."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([str(c) for c in range(matrix.num_classes)])
        for row in matrix.counts:
            writer.writerow([int(v) for v in row])
