"""Predictive mean, entropy, and disagreement metrics over MC prediction sets.

All entropies are in nats. Normalized values divide by ln(C), the entropy of
the uniform distribution, mapping uncertainty to [0, 1] regardless of class
count, pass count, or architecture.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ParseError, ValidationError
from .mc_store import McPredictionSet

# Mutual information below this (before clamping to zero) means the
# implementation disagrees with itself, not float residue.
_BALD_CONSISTENCY_FLOOR = -1e-9


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats along the last axis, with the 0*ln(0) = 0 convention."""
    plogp = np.zeros_like(p)
    nz = p > 0
    plogp[nz] = p[nz] * np.log(p[nz])
    return np.maximum(-plogp.sum(axis=-1), 0.0)


def _mean_over_passes(arr: np.ndarray) -> np.ndarray:
    """Mean along axis 0, exact wherever all passes agree bitwise.

    Pairwise float summation of T identical values can drift by an ulp, which
    would turn the disagreement term for identical passes into a nonzero
    BALD; the mean of T copies of a value is that value, so fix those slots.
    """
    mean = arr.mean(axis=0)
    if arr.shape[0] > 1:
        same = (arr == arr[0]).all(axis=0)
        if np.any(same):
            mean = np.where(same, arr[0], mean)
    return mean


def predictive_entropy(dist) -> float:
    """Entropy of a single distribution over classes.

    Raises ValidationError for negative entries or a sum off the simplex by
    more than 1e-6. Exact zeros contribute nothing.
    """
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 1:
        raise ValidationError(f"expected a distribution vector, got shape {dist.shape}")
    if (dist < 0).any():
        raise ValidationError("probabilities must be non-negative")
    if abs(float(dist.sum()) - 1.0) > 1e-6:
        raise ValidationError(f"distribution sums to {dist.sum():.8f}, not 1")
    return float(_entropy_rows(dist))


def predictive_mean(preds: McPredictionSet) -> np.ndarray:
    """Per-item average of the T softmax samples, shape (N, C)."""
    return _mean_over_passes(preds.probs)


def expected_entropy(preds: McPredictionSet, item: int) -> float:
    """Mean entropy of the individual passes for one item."""
    return float(_mean_over_passes(_entropy_rows(preds.probs[:, item, :])))


def bald(preds: McPredictionSet, item: int) -> float:
    """Mutual information between prediction and model parameters for one item.

    Entropy of the predictive mean minus the mean per-pass entropy, clamped
    below at zero to absorb float residue.
    """
    value = predictive_entropy(predictive_mean(preds)[item]) - expected_entropy(preds, item)
    if value < _BALD_CONSISTENCY_FLOOR:
        raise NumericalError(f"mutual information {value} below consistency floor for item {item}")
    return max(value, 0.0)


@dataclass(frozen=True)
class UncertaintyReport:
    """Per-item prediction and uncertainty summary.

    ``predicted_class`` is the argmax of the predictive mean (ties broken by
    lowest class index). ``entropy_ph`` and ``bald`` are in nats; the ``_norm``
    variants are divided by ln(C).
    """

    item_ids: tuple[str, ...]
    predictive_mean: np.ndarray
    predicted_class: np.ndarray
    entropy_ph: np.ndarray
    expected_entropy: np.ndarray
    bald: np.ndarray
    entropy_ph_norm: np.ndarray
    bald_norm: np.ndarray

    def __post_init__(self):
        n = len(self.item_ids)
        object.__setattr__(self, "item_ids", tuple(str(i) for i in self.item_ids))
        for name in ("predictive_mean", "predicted_class", "entropy_ph",
                     "expected_entropy", "bald", "entropy_ph_norm", "bald_norm"):
            arr = np.asarray(getattr(self, name))
            if arr.shape[0] != n:
                raise ValidationError(f"{name} has {arr.shape[0]} rows for {n} items")
            object.__setattr__(self, name, arr)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    @property
    def num_classes(self) -> int:
        return self.predictive_mean.shape[1]


def build_report(preds: McPredictionSet) -> UncertaintyReport:
    """Compute the full uncertainty report for a prediction set."""
    mean = predictive_mean(preds)
    ph = _entropy_rows(mean)
    exp_ent = _mean_over_passes(_entropy_rows(preds.probs))
    mi = ph - exp_ent
    if (mi < _BALD_CONSISTENCY_FLOOR).any():
        worst = int(np.argmin(mi))
        raise NumericalError(
            f"mutual information {mi[worst]} below consistency floor for item "
            f"{preds.item_ids[worst]!r}"
        )
    mi = np.maximum(mi, 0.0)
    max_entropy = math.log(preds.num_classes)
    return UncertaintyReport(
        item_ids=preds.item_ids,
        predictive_mean=mean,
        predicted_class=mean.argmax(axis=1).astype(np.int64),
        entropy_ph=ph,
        expected_entropy=exp_ent,
        bald=mi,
        entropy_ph_norm=ph / max_entropy,
        bald_norm=mi / max_entropy,
    )


def save_report(report: UncertaintyReport, path) -> None:
    """Write the report CSV: fixed columns then mean_0..mean_{C-1}."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["item_id", "predicted_class", "ph", "bald", "ph_norm", "bald_norm", "expected_entropy"]
            + [f"mean_{c}" for c in range(report.num_classes)]
        )
        for n, item in enumerate(report.item_ids):
            writer.writerow(
                [item, int(report.predicted_class[n])]
                + [f"{v:.17g}" for v in (report.entropy_ph[n], report.bald[n],
                                          report.entropy_ph_norm[n], report.bald_norm[n],
                                          report.expected_entropy[n])]
                + [f"{v:.17g}" for v in report.predictive_mean[n]]
            )


def load_report(path) -> UncertaintyReport:
    """Read a report CSV back into an UncertaintyReport."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        fixed = ["item_id", "predicted_class", "ph", "bald", "ph_norm", "bald_norm", "expected_entropy"]
        if header[: len(fixed)] != fixed:
            raise ParseError(f"{path}: unexpected report header")
        num_classes = len(header) - len(fixed)
        if num_classes < 2 or header[len(fixed):] != [f"mean_{c}" for c in range(num_classes)]:
            raise ParseError(f"{path}: malformed mean columns in header")
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields")
            try:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: non-numeric field") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    data = np.array(rows)
    return UncertaintyReport(
        item_ids=tuple(ids),
        predictive_mean=data[:, 6:],
        predicted_class=data[:, 0].astype(np.int64),
        entropy_ph=data[:, 1],
        bald=data[:, 2],
        entropy_ph_norm=data[:, 3],
        bald_norm=data[:, 4],
        expected_entropy=data[:, 5],
    )
