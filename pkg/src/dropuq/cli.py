"""Command-line pipeline: train the demo net, sample, analyze, refer, sweep.

A single ``--config`` JSON file is the canonical interface; individual flags
override config keys. Every subcommand is deterministic given its settings:
all randomness flows from the one ``seed`` value through named substreams, so
rerunning a command reproduces its outputs byte for byte.

Exit codes: 0 success, 2 validation/config error, 3 numerical failure. An
undefined rank correlation (constant input) is a warning, not a failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, plots, referral as referral_mod
from .errors import (
    NumericalError,
    ParseError,
    StructuralError,
    UndefinedCorrelationError,
    ValidationError,
)
from .mc_store import LabelSet, McPredictionSet, align, load_labels, load_mc_predictions, save_labels, save_mc_predictions
from .metrics import build_report, load_report, save_report
from .net import (
    SyntheticDataset,
    forward,
    generate_synthetic,
    init_network,
    input_gradient_saliency,
    load_checkpoint,
    load_features,
    mc_predict,
    save_checkpoint,
    save_features,
    train,
)
from .rng import SPLIT_STREAM, derive_rng

_COMMON_DEFAULTS = {
    "seed": 0,
    "plots": True,
}

# Demo data mirrors a 4-class imbalanced corpus at roughly 1/10 scale, with
# the rare class upweighted hard in the loss.
TRAIN_DEMO_DEFAULTS = _COMMON_DEFAULTS | {
    "counts": [158, 279, 150, 7],
    "input_dim": 8,
    "hidden": [32, 16],
    "drop_rate": 0.3,
    "class_weights": [2.0, 2.0, 1.0, 50.0],
    "overlap": 0.45,
    "test_fraction": 0.2,
    "epochs": 25,
    "batch_size": 8,
    "lr": 0.01,
    "lr_decay": 0.0,
}

PREDICT_DEFAULTS = _COMMON_DEFAULTS | {
    "checkpoint": None,
    "features": None,
    "passes": 50,
}

ANALYZE_DEFAULTS = _COMMON_DEFAULTS | {
    "mc": None,
    "labels": None,
}

REFERRAL_DEFAULTS = _COMMON_DEFAULTS | {
    "report": None,
    "labels": None,
    "fractions": [round(0.1 * i, 1) for i in range(11)],
    "thresholds": [round(0.1 * i, 1) for i in range(11)],
    "trials": 1000,
    "human_accuracy": None,
}

SWEEP_DEFAULTS = _COMMON_DEFAULTS | {
    "counts": TRAIN_DEMO_DEFAULTS["counts"],
    "input_dim": TRAIN_DEMO_DEFAULTS["input_dim"],
    "hidden": TRAIN_DEMO_DEFAULTS["hidden"],
    "class_weights": TRAIN_DEMO_DEFAULTS["class_weights"],
    "overlap": TRAIN_DEMO_DEFAULTS["overlap"],
    "test_fraction": TRAIN_DEMO_DEFAULTS["test_fraction"],
    "epochs": TRAIN_DEMO_DEFAULTS["epochs"],
    "batch_size": TRAIN_DEMO_DEFAULTS["batch_size"],
    "lr": TRAIN_DEMO_DEFAULTS["lr"],
    "lr_decay": TRAIN_DEMO_DEFAULTS["lr_decay"],
    "rates": [0.1, 0.3, 0.5],
    "samples": [10, 25, 50],
}

SALIENCY_DEFAULTS = _COMMON_DEFAULTS | {
    "checkpoint": None,
    "features": None,
    "item": None,
    "target_class": None,
}


def _read_config(path) -> dict:
    if not os.path.isfile(path):
        raise ValidationError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return config


def _resolve_settings(args, defaults) -> dict:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    settings = dict(defaults)
    if args.config:
        config = _read_config(args.config)
        unknown = sorted(set(config) - set(defaults) - {"out"})
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        settings.update(config)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def _resolve_out(args, settings) -> str:
    out = args.out
    if out is None and args.config:
        out = _read_config(args.config).get("out")
    if out is None:
        out = "."
    if not os.path.isdir(out):
        raise ValidationError(f"output directory does not exist: {out}")
    return out


def _require_file(path, what) -> str:
    if not os.path.isfile(path):
        raise ValidationError(f"{what} not found: {path}")
    return path


def _default_path(settings, key, out, filename) -> str:
    return settings[key] if settings[key] else os.path.join(out, filename)


def _write_json(payload, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _fmt(value) -> str:
    return "" if value is None else f"{value:.17g}"


def _item_ids(count) -> tuple:
    return tuple(f"item_{i:05d}" for i in range(count))


def _stratified_split(labels: np.ndarray, num_classes: int, test_fraction: float, seed: int):
    """Index split keeping every class on both sides; order within side stable."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError("test_fraction must lie strictly between 0 and 1")
    rng = derive_rng(seed, SPLIT_STREAM)
    picks = []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise ValidationError(f"class {c} needs at least 2 items to split")
        k = min(len(idx) - 1, max(1, round(test_fraction * len(idx))))
        picks.append(rng.permutation(idx)[:k])
    test_idx = np.sort(np.concatenate(picks))
    train_idx = np.setdiff1d(np.arange(len(labels)), test_idx)
    return train_idx, test_idx


def _demo_net_and_data(settings):
    counts = [int(k) for k in settings["counts"]]
    num_classes = len(counts)
    data = generate_synthetic(settings["seed"], counts, int(settings["input_dim"]),
                              float(settings["overlap"]))
    train_idx, test_idx = _stratified_split(data.labels, num_classes,
                                            float(settings["test_fraction"]),
                                            settings["seed"])
    sizes = [int(settings["input_dim"])] + [int(h) for h in settings["hidden"]] + [num_classes]
    net = init_network(sizes, float(settings["drop_rate"]),
                       np.asarray(settings["class_weights"], dtype=np.float64),
                       settings["seed"])
    return data, train_idx, test_idx, net


def _train_on_subset(net, data, train_idx, settings):
    x = data.inputs[train_idx]
    y = data.labels[train_idx]
    subset = SyntheticDataset(x, y, tuple(int(k) for k in np.bincount(y, minlength=data.num_classes)))
    decay = float(settings["lr_decay"]) or None
    return train(net, subset, int(settings["epochs"]), int(settings["batch_size"]),
                 float(settings["lr"]), settings["seed"], lr_decay=decay)


def _write_loss_trace(losses, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(losses, start=1):
            fh.write(f"{i},{loss:.17g}\n")


def cmd_train_demo(args) -> int:
    settings = _resolve_settings(args, TRAIN_DEMO_DEFAULTS)
    out = _resolve_out(args, settings)
    data, train_idx, test_idx, net = _demo_net_and_data(settings)
    result = _train_on_subset(net, data, train_idx, settings)

    ids = _item_ids(data.num_items)
    train_ids = tuple(ids[i] for i in train_idx)
    test_ids = tuple(ids[i] for i in test_idx)
    save_checkpoint(result.net, os.path.join(out, "checkpoint.json"))
    _write_loss_trace(result.epoch_losses, os.path.join(out, "loss_trace.csv"))
    save_features(train_ids, data.inputs[train_idx], os.path.join(out, "train_features.csv"))
    save_labels(LabelSet(train_ids, data.labels[train_idx]), os.path.join(out, "train_labels.csv"))
    save_features(test_ids, data.inputs[test_idx], os.path.join(out, "test_features.csv"))
    save_labels(LabelSet(test_ids, data.labels[test_idx]), os.path.join(out, "test_labels.csv"))
    if settings["plots"]:
        plots.plot_loss_trace(result.epoch_losses, os.path.join(out, "loss_trace.png"))

    probs = forward(result.net, data.inputs[train_idx])
    accuracy = float((probs.argmax(axis=1) == data.labels[train_idx]).mean())
    print(f"final train accuracy: {accuracy:.4f}")
    return 0


def cmd_predict(args) -> int:
    settings = _resolve_settings(args, PREDICT_DEFAULTS)
    out = _resolve_out(args, settings)
    checkpoint = _require_file(_default_path(settings, "checkpoint", out, "checkpoint.json"),
                               "checkpoint")
    features = _require_file(_default_path(settings, "features", out, "test_features.csv"),
                             "features file")
    net = load_checkpoint(checkpoint)
    ids, x = load_features(features)
    preds = mc_predict(net, x, int(settings["passes"]), settings["seed"], item_ids=ids)
    save_mc_predictions(preds, os.path.join(out, "mc_samples.csv"))
    print(f"wrote {preds.num_passes} passes over {preds.num_items} items")
    return 0


def _spearman_or_none(x, y, label):
    try:
        return analysis.spearman_rho(x, y)
    except UndefinedCorrelationError as exc:
        print(f"warning: {label} correlation undefined: {exc}", file=sys.stderr)
        return None


def cmd_analyze(args) -> int:
    settings = _resolve_settings(args, ANALYZE_DEFAULTS)
    out = _resolve_out(args, settings)
    mc_path = _require_file(_default_path(settings, "mc", out, "mc_samples.csv"), "MC-samples file")
    labels_path = _require_file(_default_path(settings, "labels", out, "test_labels.csv"),
                                "labels file")
    preds = load_mc_predictions(mc_path)
    labels = load_labels(labels_path)
    aligned = align(preds, labels)
    if aligned.dropped_preds or aligned.dropped_labels:
        print(f"warning: dropped {aligned.dropped_preds} prediction ids and "
              f"{aligned.dropped_labels} label ids without a counterpart", file=sys.stderr)

    report = build_report(aligned.preds)
    save_report(report, os.path.join(out, "report.csv"))

    profile = analysis.error_profile(report, aligned.labels)
    summary = analysis.group_summary(report, profile)
    _write_json(analysis.summary_to_dict(summary), os.path.join(out, "group_summary.json"))

    confusion = analysis.confusion_matrix(report, aligned.labels)
    analysis.save_confusion(confusion, os.path.join(out, "confusion_matrix.csv"))

    correlation = {
        "spearman_ph_wd": _spearman_or_none(report.entropy_ph, profile.wd_error, "PH"),
        "spearman_bald_wd": _spearman_or_none(report.bald, profile.wd_error, "BALD"),
        "n": report.num_items,
    }
    _write_json(correlation, os.path.join(out, "correlation.json"))

    if settings["plots"]:
        plots.plot_uncertainty_groups(report.entropy_ph_norm[profile.correct],
                                      report.entropy_ph_norm[~profile.correct],
                                      "normalized predictive entropy",
                                      os.path.join(out, "uncertainty_groups.png"))
        plots.plot_confusion(confusion.counts, os.path.join(out, "confusion_matrix.png"))

    print(f"accuracy: {confusion.accuracy():.4f} over {report.num_items} items")
    return 0


def cmd_referral(args) -> int:
    settings = _resolve_settings(args, REFERRAL_DEFAULTS)
    out = _resolve_out(args, settings)
    report_path = _require_file(_default_path(settings, "report", out, "report.csv"), "report file")
    labels_path = _require_file(_default_path(settings, "labels", out, "test_labels.csv"),
                                "labels file")
    report = load_report(report_path)
    labels = load_labels(labels_path)
    lookup = dict(zip(labels.item_ids, labels.labels))
    missing = [i for i in report.item_ids if i not in lookup]
    if missing:
        raise ValidationError(f"labels missing for {len(missing)} report items (first: {missing[0]})")
    truth = np.array([lookup[i] for i in report.item_ids])
    correct = report.predicted_class == truth

    fractions = [float(f) for f in settings["fractions"]]
    thresholds = [float(t) for t in settings["thresholds"]]
    curve_f = referral_mod.refer_by_fraction(report.entropy_ph_norm, correct, fractions)
    curve_t = referral_mod.refer_by_threshold(report.entropy_ph_norm, correct, thresholds)
    baseline = referral_mod.random_referral_baseline(correct, fractions,
                                                     int(settings["trials"]), settings["seed"])

    human = settings["human_accuracy"]
    combined = None
    if human is not None:
        combined = referral_mod.combined_accuracy(curve_f, len(truth), float(human))
    referral_mod.save_curve(curve_f, os.path.join(out, "referral_fraction.csv"),
                            combined=combined,
                            human_accuracy=None if human is None else float(human))
    referral_mod.save_curve(curve_t, os.path.join(out, "referral_threshold.csv"))
    referral_mod.save_baseline(baseline, os.path.join(out, "random_baseline.csv"))
    if settings["plots"]:
        plots.plot_referral(curve_f, curve_t, baseline, os.path.join(out, "referral_curves.png"))

    print(f"overall accuracy {baseline.analytic_expectation:.4f}; "
          f"{len(curve_f.points)} fraction points, {len(curve_t.points)} threshold points")
    return 0


def cmd_sweep(args) -> int:
    settings = _resolve_settings(args, SWEEP_DEFAULTS)
    out = _resolve_out(args, settings)
    rates = [float(p) for p in settings["rates"]]
    samples = sorted(int(t) for t in settings["samples"])
    if not rates or not samples:
        raise ValidationError("rates and samples must be non-empty")

    rows = []
    for p in rates:
        per_rate = dict(settings, drop_rate=p)
        data, train_idx, test_idx, net = _demo_net_and_data(per_rate)
        result = _train_on_subset(net, data, train_idx, per_rate)
        test_ids = tuple(_item_ids(data.num_items)[i] for i in test_idx)
        lab = LabelSet(test_ids, data.labels[test_idx])
        preds_full = mc_predict(result.net, data.inputs[test_idx], samples[-1],
                                settings["seed"], item_ids=test_ids)
        for t in samples:
            preds = McPredictionSet(preds_full.item_ids, preds_full.probs[:t])
            report = build_report(preds)
            profile = analysis.error_profile(report, lab)
            summary = analysis.group_summary(report, profile)
            rows.append({
                "p": p,
                "T": t,
                "spearman_ph_wd": _spearman_or_none(report.entropy_ph, profile.wd_error,
                                                    f"p={p:g} T={t} PH"),
                "spearman_bald_wd": _spearman_or_none(report.bald, profile.wd_error,
                                                      f"p={p:g} T={t} BALD"),
                "mean_ph_correct": summary.correct.ph_mean if summary.correct else None,
                "mean_ph_wrong": summary.erroneous.ph_mean if summary.erroneous else None,
                "accuracy": float(profile.correct.mean()),
            })

    sweep_path = os.path.join(out, "sweep.csv")
    with open(sweep_path, "w", newline="", encoding="utf-8") as fh:
        fh.write("p,T,spearman_ph_wd,spearman_bald_wd,mean_ph_correct,mean_ph_wrong,accuracy\n")
        for r in rows:
            fh.write(f"{r['p']:.17g},{r['T']},{_fmt(r['spearman_ph_wd'])},"
                     f"{_fmt(r['spearman_bald_wd'])},{_fmt(r['mean_ph_correct'])},"
                     f"{_fmt(r['mean_ph_wrong'])},{r['accuracy']:.17g}\n")
    if settings["plots"]:
        plots.plot_sweep(rows, os.path.join(out, "sweep.png"))

    print(f"swept {len(rates)} rates x {len(samples)} sample counts -> {len(rows)} rows")
    return 0


def cmd_saliency(args) -> int:
    settings = _resolve_settings(args, SALIENCY_DEFAULTS)
    out = _resolve_out(args, settings)
    checkpoint = _require_file(_default_path(settings, "checkpoint", out, "checkpoint.json"),
                               "checkpoint")
    features = _require_file(_default_path(settings, "features", out, "test_features.csv"),
                             "features file")
    net = load_checkpoint(checkpoint)
    ids, x = load_features(features)
    if settings["item"] is None:
        idx = 0
    else:
        try:
            idx = ids.index(settings["item"])
        except ValueError:
            raise ValidationError(f"item {settings['item']!r} not in {features}") from None

    probs = forward(net, x[idx])
    target = settings["target_class"]
    target = int(np.argmax(probs)) if target is None else int(target)
    gradient = input_gradient_saliency(net, x[idx], target)

    with open(os.path.join(out, "saliency.csv"), "w", newline="", encoding="utf-8") as fh:
        fh.write("feature_index,input_value,gradient\n")
        for j, (value, grad) in enumerate(zip(x[idx], gradient)):
            fh.write(f"{j},{value:.17g},{grad:.17g}\n")
    if settings["plots"]:
        plots.plot_saliency(x[idx], gradient, os.path.join(out, "saliency.png"))

    print(f"item {ids[idx]}: target class {target}, p={probs[target]:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dropuq",
        description="Monte-Carlo dropweight uncertainty pipeline over CSV/JSON artifacts.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--seed", type=int, help="master seed for all randomness")
        p.add_argument("--out", help="output directory (must already exist)")
        p.add_argument("--no-plots", action="store_false", dest="plots", default=None,
                       help="skip PNG rendering")

    p = sub.add_parser("train-demo", help="train the demo net on synthetic imbalanced blobs")
    common(p)
    p.add_argument("--drop-rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--overlap", type=float)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--input-dim", type=int)
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("predict", help="run stochastic forward passes over a feature file")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--features")
    p.add_argument("--passes", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("analyze", help="uncertainty report, group summary, confusion, correlations")
    common(p)
    p.add_argument("--mc", help="MC-samples CSV")
    p.add_argument("--labels")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("referral", help="accuracy of retained predictions under referral")
    common(p)
    p.add_argument("--report")
    p.add_argument("--labels")
    p.add_argument("--trials", type=int)
    p.add_argument("--human-accuracy", type=float,
                   help="add a column mixing referred items resolved at this accuracy")
    p.set_defaults(func=cmd_referral)

    p = sub.add_parser("sweep", help="correlation grid over drop rates and MC sample counts")
    common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--overlap", type=float)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("saliency", help="input-gradient attribution for one item")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--features")
    p.add_argument("--item", help="item id to explain (default: first row)")
    p.add_argument("--target-class", type=int)
    p.set_defaults(func=cmd_saliency)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, StructuralError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())
