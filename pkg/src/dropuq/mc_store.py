"""Data model and CSV interchange for MC prediction samples and ground-truth labels.

The MC-samples file has header ``item_id,mc_pass,p_0,...,p_{C-1}`` with one row
per (item, pass); ``mc_pass`` runs over 0..T-1 and item order must be the same
within every pass. The labels file has header ``item_id,label``. Both are
UTF-8, comma-separated, ``.`` decimal point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, StructuralError, ValidationError

ROW_SUM_TOLERANCE = 1e-6

# Rows already this close to the simplex are left untouched, which makes
# renormalization idempotent and load -> save -> load bit-identical.
_RENORM_SKIP = 1e-12


def _check_unique_ids(item_ids: tuple[str, ...]) -> None:
    seen = set()
    for item in item_ids:
        if item in seen:
            raise ValidationError(f"duplicate item_id {item!r}")
        seen.add(item)


@dataclass(frozen=True)
class McPredictionSet:
    """T stochastic softmax samples for N items over C classes.

    ``probs`` has shape (T, N, C). Rows are validated against the simplex
    within ``ROW_SUM_TOLERANCE`` and renormalized exactly onto it, so
    downstream log-domain code never sees a row sum off by more than float
    round-off. Instances are immutable and safe to share across threads.
    """

    item_ids: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 3:
            raise ValidationError(f"probs must have shape (T, N, C), got {probs.shape}")
        t, n, c = probs.shape
        if t < 1:
            raise ValidationError("at least one MC pass is required")
        if c < 2:
            raise ValidationError(f"need at least 2 classes, got {c}")
        item_ids = tuple(str(i) for i in self.item_ids)
        if len(item_ids) != n:
            raise ValidationError(f"{len(item_ids)} item_ids for {n} items")
        _check_unique_ids(item_ids)
        if not np.isfinite(probs).all():
            raise ValidationError("probabilities must be finite")
        if (probs < 0).any() or (probs > 1).any():
            raise ValidationError("probabilities must lie in [0, 1]")
        sums = probs.sum(axis=2)
        dev = np.abs(sums - 1.0)
        if (dev > ROW_SUM_TOLERANCE).any():
            ti, ni = np.argwhere(dev > ROW_SUM_TOLERANCE)[0]
            raise ValidationError(
                f"probabilities for item {item_ids[ni]!r} pass {ti} sum to "
                f"{sums[ti, ni]:.8f}, off by more than {ROW_SUM_TOLERANCE}"
            )
        fix = dev > _RENORM_SKIP
        if fix.any():
            probs[fix] /= sums[fix][:, None]
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "item_ids", item_ids)

    @property
    def num_passes(self) -> int:
        return self.probs.shape[0]

    @property
    def num_items(self) -> int:
        return self.probs.shape[1]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]


@dataclass(frozen=True)
class LabelSet:
    """Ground-truth class indices keyed by item id."""

    item_ids: tuple[str, ...]
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ValidationError("labels must be one-dimensional")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == labels.astype(np.int64)):
                raise ValidationError("labels must be integers")
        labels = labels.astype(np.int64)
        item_ids = tuple(str(i) for i in self.item_ids)
        if len(item_ids) != len(labels):
            raise ValidationError(f"{len(item_ids)} item_ids for {len(labels)} labels")
        _check_unique_ids(item_ids)
        if (labels < 0).any():
            raise ValidationError("labels must be non-negative")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "item_ids", item_ids)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class Aligned:
    """Prediction set and labels restricted to their shared item ids."""

    preds: McPredictionSet
    labels: LabelSet
    dropped_preds: int
    dropped_labels: int


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Rows with 1-based line numbers; the header is validated by the caller."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=2) if row]
    return header, rows


def load_mc_predictions(path, expected_classes: int | None = None) -> McPredictionSet:
    """Load and validate an MC-samples CSV.

    T is inferred from the distinct ``mc_pass`` values, which must form
    0..T-1 and cover every item; item order must be identical in every pass
    (enforced, not sorted, so provenance of the order stays explicit).
    """
    header, rows = _read_rows(path)
    if len(header) < 4 or header[:2] != ["item_id", "mc_pass"]:
        raise ParseError(f"{path}: header must be item_id,mc_pass,p_0,...,p_{{C-1}}")
    num_classes = len(header) - 2
    if header[2:] != [f"p_{c}" for c in range(num_classes)]:
        raise ParseError(f"{path}: malformed probability columns in header")
    if expected_classes is not None and num_classes != expected_classes:
        raise ValidationError(
            f"{path}: expected {expected_classes} classes, file has {num_classes}"
        )

    order_per_pass: dict[int, list[str]] = {}
    values: dict[tuple[str, int], list[float]] = {}
    for lineno, row in rows:
        if len(row) != 2 + num_classes:
            raise ParseError(f"{path}: line {lineno}: expected {2 + num_classes} fields, got {len(row)}")
        item = row[0]
        try:
            mc_pass = int(row[1])
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: mc_pass {row[1]!r} is not an integer") from None
        if mc_pass < 0:
            raise ParseError(f"{path}: line {lineno}: mc_pass must be non-negative")
        try:
            probs = [float(v) for v in row[2:]]
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: non-numeric probability") from None
        if (item, mc_pass) in values:
            raise StructuralError(f"{path}: line {lineno}: duplicate row for item {item!r} pass {mc_pass}")
        values[(item, mc_pass)] = probs
        order_per_pass.setdefault(mc_pass, []).append(item)

    if not values:
        raise ParseError(f"{path}: no data rows")
    num_passes = len(order_per_pass)
    if sorted(order_per_pass) != list(range(num_passes)):
        raise StructuralError(f"{path}: mc_pass values must form 0..T-1, got {sorted(order_per_pass)}")
    item_order = order_per_pass[0]
    for t in range(1, num_passes):
        if order_per_pass[t] != item_order:
            raise StructuralError(
                f"{path}: pass {t} lists items in a different order or count than pass 0"
            )

    probs = np.empty((num_passes, len(item_order), num_classes))
    for n, item in enumerate(item_order):
        for t in range(num_passes):
            probs[t, n] = values[(item, t)]
    return McPredictionSet(tuple(item_order), probs)


def save_mc_predictions(preds: McPredictionSet, path) -> None:
    """Write the MC-samples CSV, item-major, probabilities at 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "mc_pass"] + [f"p_{c}" for c in range(preds.num_classes)])
        for n, item in enumerate(preds.item_ids):
            for t in range(preds.num_passes):
                writer.writerow([item, t] + [f"{v:.17g}" for v in preds.probs[t, n]])


def load_labels(path) -> LabelSet:
    """Load and validate a labels CSV."""
    header, rows = _read_rows(path)
    if header != ["item_id", "label"]:
        raise ParseError(f"{path}: header must be item_id,label")
    item_ids: list[str] = []
    labels: list[int] = []
    seen: set[str] = set()
    for lineno, row in rows:
        if len(row) != 2:
            raise ParseError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
        item, raw = row
        try:
            label = int(raw)
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: label {raw!r} is not an integer") from None
        if label < 0:
            raise ParseError(f"{path}: line {lineno}: label must be non-negative")
        if item in seen:
            raise ValidationError(f"{path}: line {lineno}: duplicate item_id {item!r}")
        seen.add(item)
        item_ids.append(item)
        labels.append(label)
    return LabelSet(tuple(item_ids), np.array(labels, dtype=np.int64))


def save_labels(labels: LabelSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "label"])
        for item, label in zip(labels.item_ids, labels.labels):
            writer.writerow([item, int(label)])


def align(preds: McPredictionSet, labels: LabelSet) -> Aligned:
    """Restrict both structures to their shared item ids, in prediction order.

    Labels outside [0, C) for the shared items are rejected here, the first
    point where the class count is known. Idempotent: aligning an aligned
    pair changes nothing.
    """
    label_index = {item: i for i, item in enumerate(labels.item_ids)}
    keep = [n for n, item in enumerate(preds.item_ids) if item in label_index]
    if not keep:
        raise ValidationError("prediction and label item_ids have an empty intersection")
    kept_ids = tuple(preds.item_ids[n] for n in keep)
    kept_labels = labels.labels[[label_index[i] for i in kept_ids]]
    if (kept_labels >= preds.num_classes).any():
        bad = int(np.argmax(kept_labels >= preds.num_classes))
        raise ValidationError(
            f"label {int(kept_labels[bad])} for item {kept_ids[bad]!r} is out of range "
            f"for {preds.num_classes} classes"
        )
    aligned_preds = McPredictionSet(kept_ids, preds.probs[:, keep, :])
    aligned_labels = LabelSet(kept_ids, kept_labels)
    return Aligned(
        preds=aligned_preds,
        labels=aligned_labels,
        dropped_preds=preds.num_items - len(keep),
        dropped_labels=len(labels) - len(keep),
    )
