"""Uncertainty-aware referral curves.

Given per-item uncertainty and correctness, evaluates the accuracy of the
predictions we keep after sending the most doubtful cases elsewhere, swept
either over the referred fraction or over a tolerated normalized-uncertainty
threshold, plus a seeded random-referral control for comparison.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .rng import BASELINE_STREAM, derive_rng

# ceil(f * N) with a guard against f arriving slightly above the intended
# grid value after binary rounding (e.g. 0.3 * 10 -> 3.0000000000000004).
_CEIL_GUARD = 1e-9

FRACTION = "fraction"
THRESHOLD = "threshold"


@dataclass(frozen=True)
class ReferralPoint:
    control_value: float
    retained_count: int
    retained_accuracy: float | None


@dataclass(frozen=True)
class ReferralCurve:
    """Sweep results; control values strictly increasing, counts monotone."""

    mode: str
    points: tuple[ReferralPoint, ...]

    def __post_init__(self):
        if self.mode not in (FRACTION, THRESHOLD):
            raise ValidationError(f"unknown referral mode {self.mode!r}")
        controls = [p.control_value for p in self.points]
        if any(b <= a for a, b in zip(controls, controls[1:])):
            raise ValidationError("control values must be strictly increasing")
        for p in self.points:
            if not 0.0 <= p.control_value <= 1.0:
                raise ValidationError(f"control value {p.control_value} outside [0, 1]")
            if (p.retained_accuracy is None) != (p.retained_count == 0):
                raise ValidationError("accuracy must be absent exactly when nothing is retained")
            if p.retained_accuracy is not None and not 0.0 <= p.retained_accuracy <= 1.0:
                raise ValidationError("retained accuracy must lie in [0, 1]")
        counts = [p.retained_count for p in self.points]
        if self.mode == FRACTION:
            if any(b > a for a, b in zip(counts, counts[1:])):
                raise ValidationError("retained count cannot grow as more items are referred")
        else:
            if any(b < a for a, b in zip(counts, counts[1:])):
                raise ValidationError("retained count cannot shrink as the threshold loosens")


@dataclass(frozen=True)
class RandomBaseline:
    """Random-referral control: empirical curve, per-point spread, analytic mean."""

    curve: ReferralCurve
    stddevs: tuple[float | None, ...]
    analytic_expectation: float

    def __post_init__(self):
        if len(self.stddevs) != len(self.curve.points):
            raise ValidationError("one stddev per curve point")
        for sd, p in zip(self.stddevs, self.curve.points):
            if (sd is None) != (p.retained_accuracy is None):
                raise ValidationError("stddev must be absent exactly when accuracy is")


def _as_correct(correct) -> np.ndarray:
    arr = np.asarray(correct, dtype=bool)
    if arr.ndim != 1 or len(arr) == 0:
        raise ValidationError("correct must be a non-empty 1-D boolean vector")
    return arr


def _referral_count(fraction: float, n: int) -> int:
    return min(n, math.ceil(fraction * n - _CEIL_GUARD))


def refer_by_fraction(uncertainty, correct, fractions) -> ReferralCurve:
    """Accuracy over retained items after referring the ceil(f*N) most uncertain.

    Ties in uncertainty are broken by original item order, so the referred set
    is reproducible. Fractions must be sorted ascending.
    """
    u = np.asarray(uncertainty, dtype=np.float64)
    ok = _as_correct(correct)
    if u.shape != ok.shape:
        raise ValidationError("uncertainty and correct must have the same length")
    fractions = [float(f) for f in fractions]
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValidationError("fractions must lie in [0, 1]")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ValidationError("fractions must be sorted strictly ascending")

    n = len(u)
    most_uncertain_first = np.argsort(-u, kind="stable")
    points = []
    for f in fractions:
        k = _referral_count(f, n)
        retained = most_uncertain_first[k:]
        acc = float(ok[retained].mean()) if len(retained) else None
        points.append(ReferralPoint(f, len(retained), acc))
    return ReferralCurve(FRACTION, tuple(points))


def refer_by_threshold(uncertainty_norm, correct, thresholds) -> ReferralCurve:
    """Retain items with normalized uncertainty strictly below each threshold.

    The comparison is strict, so a threshold of 0 refers everything.
    """
    u = np.asarray(uncertainty_norm, dtype=np.float64)
    ok = _as_correct(correct)
    if u.shape != ok.shape:
        raise ValidationError("uncertainty_norm and correct must have the same length")
    if ((u < 0) | (u > 1)).any():
        raise ValidationError("normalized uncertainty must lie in [0, 1]")
    thresholds = [float(t) for t in thresholds]
    if any(not 0.0 <= t <= 1.0 for t in thresholds):
        raise ValidationError("thresholds must lie in [0, 1]")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValidationError("thresholds must be sorted strictly ascending")

    points = []
    for tau in thresholds:
        retained = u < tau
        count = int(retained.sum())
        acc = float(ok[retained].mean()) if count else None
        points.append(ReferralPoint(tau, count, acc))
    return ReferralCurve(THRESHOLD, tuple(points))


def random_referral_baseline(correct, fractions, trials: int, seed: int) -> RandomBaseline:
    """Referral with uniformly random subsets instead of uncertainty ranking.

    Averages retained accuracy over `trials` independent draws per fraction
    and reports the per-point population standard deviation. The analytic
    expectation is the overall accuracy at every fraction: removing a uniform
    random subset leaves the mean unchanged.
    """
    ok = _as_correct(correct)
    if trials < 1:
        raise ValidationError("need at least one trial")
    fractions = [float(f) for f in fractions]
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValidationError("fractions must lie in [0, 1]")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ValidationError("fractions must be sorted strictly ascending")

    n = len(ok)
    points = []
    stddevs = []
    for fi, f in enumerate(fractions):
        k = _referral_count(f, n)
        if k == n:
            points.append(ReferralPoint(f, 0, None))
            stddevs.append(None)
            continue
        accs = np.empty(trials)
        for trial in range(trials):
            rng = derive_rng(seed, BASELINE_STREAM, fi, trial)
            retained = rng.permutation(n)[k:]
            accs[trial] = ok[retained].mean()
        if (accs == accs[0]).all():
            # identical draws (e.g. f=0 keeps everything): report the exact
            # value, not a mean that can drift by an ulp
            points.append(ReferralPoint(f, n - k, float(accs[0])))
            stddevs.append(0.0)
        else:
            points.append(ReferralPoint(f, n - k, float(accs.mean())))
            stddevs.append(float(accs.std()))
    curve = ReferralCurve(FRACTION, tuple(points))
    return RandomBaseline(curve, tuple(stddevs), float(ok.mean()))


def combined_accuracy(curve: ReferralCurve, total_items: int, human_accuracy: float) -> list[float]:
    """Overall accuracy when referred items are resolved at a fixed reviewer accuracy.

    This is one reading of mixed human/model triage (each referred case decided
    independently at `human_accuracy`), exposed as an optional extra column
    rather than part of the curve itself.
    """
    if not 0.0 <= human_accuracy <= 1.0:
        raise ValidationError("human_accuracy must lie in [0, 1]")
    if total_items < 1 or any(p.retained_count > total_items for p in curve.points):
        raise ValidationError("total_items must cover every retained count")
    combined = []
    for p in curve.points:
        kept_correct = p.retained_count * (p.retained_accuracy or 0.0)
        referred = total_items - p.retained_count
        combined.append((kept_correct + referred * human_accuracy) / total_items)
    return combined


def _fmt(value) -> str:
    return "" if value is None else f"{value:.17g}"


def save_curve(curve: ReferralCurve, path, combined=None, human_accuracy=None) -> None:
    """Curve CSV with an empty accuracy field where nothing was retained.

    When `combined` is given (see :func:`combined_accuracy`) an extra
    `combined_accuracy_h=<h>` column labels the assumed reviewer accuracy.
    """
    header = ["control_value", "retained_count", "retained_accuracy"]
    if combined is not None:
        if len(combined) != len(curve.points):
            raise ValidationError("one combined value per curve point")
        header.append(f"combined_accuracy_h={human_accuracy:g}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, p in enumerate(curve.points):
            row = [_fmt(p.control_value), str(p.retained_count), _fmt(p.retained_accuracy)]
            if combined is not None:
                row.append(_fmt(combined[i]))
            writer.writerow(row)


def save_baseline(baseline: RandomBaseline, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["control_value", "retained_count", "retained_accuracy",
                         "stddev", "analytic_expectation"])
        for p, sd in zip(baseline.curve.points, baseline.stddevs):
            writer.writerow([_fmt(p.control_value), str(p.retained_count),
                             _fmt(p.retained_accuracy), _fmt(sd),
                             _fmt(baseline.analytic_expectation)])
