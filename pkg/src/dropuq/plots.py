"""Figure rendering for the CLI report paths.

Every function writes a PNG next to the delimited outputs and returns the
path. The Agg backend is forced so rendering works headless, and PNG metadata
is stripped so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, metadata={"Software": None})
    plt.close(fig)
    return path


def _gaussian_kde(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Fixed-bandwidth Gaussian kernel density estimate on `grid`."""
    v = np.asarray(values, dtype=np.float64)
    spread = v.std()
    if spread == 0.0:
        spread = max(abs(v[0]), 1.0) * 1e-3
    bandwidth = 1.06 * spread * len(v) ** (-0.2)
    z = (grid[:, None] - v[None, :]) / bandwidth
    return np.exp(-0.5 * z * z).sum(axis=1) / (len(v) * bandwidth * np.sqrt(2.0 * np.pi))


def plot_uncertainty_groups(correct_values, wrong_values, metric_label, path):
    """Density of an uncertainty metric for correct vs erroneous predictions."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    grid = np.linspace(0.0, 1.0, 256)
    for values, label, color in ((correct_values, "correct", "tab:blue"),
                                 (wrong_values, "erroneous", "tab:red")):
        values = np.asarray(values, dtype=np.float64)
        if len(values) == 0:
            continue
        density = _gaussian_kde(values, grid)
        ax.plot(grid, density, color=color, label=f"{label} (n={len(values)})")
        ax.fill_between(grid, density, alpha=0.25, color=color)
    ax.set_xlabel(metric_label)
    ax.set_ylabel("density")
    ax.set_xlim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_confusion(counts, path):
    counts = np.asarray(counts)
    num_classes = counts.shape[0]
    fig, ax = plt.subplots(figsize=(5.0, 4.5))
    image = ax.imshow(counts, cmap="Blues")
    threshold = counts.max() / 2.0 if counts.max() else 0.5
    for i in range(num_classes):
        for j in range(num_classes):
            ax.text(j, i, str(int(counts[i, j])), ha="center", va="center",
                    color="white" if counts[i, j] > threshold else "black")
    ax.set_xlabel("predicted class")
    ax.set_ylabel("true class")
    ax.set_xticks(range(num_classes))
    ax.set_yticks(range(num_classes))
    fig.colorbar(image, ax=ax)
    fig.tight_layout()
    return _save(fig, path)


def plot_loss_trace(epoch_losses, path):
    losses = np.asarray(epoch_losses, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(np.arange(1, len(losses) + 1), losses, marker="o", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    fig.tight_layout()
    return _save(fig, path)


def _curve_xy(curve):
    xs = [p.control_value for p in curve.points if p.retained_accuracy is not None]
    ys = [p.retained_accuracy for p in curve.points if p.retained_accuracy is not None]
    return np.asarray(xs), np.asarray(ys)


def plot_referral(fraction_curve, threshold_curve=None, baseline=None, path="referral.png"):
    """Retained accuracy against the referral controls, with the random control."""
    panels = 1 + (threshold_curve is not None)
    fig, axes = plt.subplots(1, panels, figsize=(6.0 * panels, 4.0), squeeze=False)
    ax = axes[0, 0]
    xs, ys = _curve_xy(fraction_curve)
    ax.plot(xs, ys, marker="o", markersize=3, color="tab:blue", label="by uncertainty")
    if baseline is not None:
        bx, by = _curve_xy(baseline.curve)
        sd = np.asarray([s for s, p in zip(baseline.stddevs, baseline.curve.points)
                         if p.retained_accuracy is not None])
        ax.plot(bx, by, color="tab:gray", label="random referral")
        ax.fill_between(bx, by - sd, by + sd, color="tab:gray", alpha=0.25)
        ax.axhline(baseline.analytic_expectation, color="tab:gray", linestyle=":")
    ax.set_xlabel("referred fraction")
    ax.set_ylabel("retained accuracy")
    ax.legend()
    if threshold_curve is not None:
        ax = axes[0, 1]
        xs, ys = _curve_xy(threshold_curve)
        ax.plot(xs, ys, marker="o", markersize=3, color="tab:blue")
        ax.set_xlabel("tolerated normalized uncertainty")
        ax.set_ylabel("retained accuracy")
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(rows, path):
    """Rank correlation against drop rate, one line style per MC sample count.

    `rows` are dicts with keys p, T, spearman_ph_wd, spearman_bald_wd (None
    where the correlation was undefined).
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    sample_counts = sorted({r["T"] for r in rows})
    colors = plt.cm.viridis(np.linspace(0.15, 0.85, len(sample_counts)))
    for color, t in zip(colors, sample_counts):
        sub = sorted((r for r in rows if r["T"] == t), key=lambda r: r["p"])
        ps = [r["p"] for r in sub]
        for key, style, name in (("spearman_ph_wd", "-", "PH"),
                                 ("spearman_bald_wd", "--", "BALD")):
            vals = [r[key] for r in sub]
            keep = [(p, v) for p, v in zip(ps, vals) if v is not None]
            if keep:
                ax.plot([p for p, _ in keep], [v for _, v in keep], style,
                        color=color, marker="o", markersize=3, label=f"{name}, T={t}")
    ax.set_xlabel("drop rate p")
    ax.set_ylabel("rank correlation with per-item error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_saliency(feature_values, gradients, path):
    """Input values and the matching log-probability gradients, side by side."""
    x = np.asarray(feature_values, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    idx = np.arange(len(x))
    fig, (ax_top, ax_bottom) = plt.subplots(2, 1, figsize=(6.0, 5.0), sharex=True)
    ax_top.bar(idx, x, color="tab:blue")
    ax_top.set_ylabel("input value")
    colors = np.where(g >= 0, "tab:green", "tab:red")
    ax_bottom.bar(idx, g, color=colors)
    ax_bottom.set_ylabel("d ln p(target) / dx")
    ax_bottom.set_xlabel("input dimension")
    ax_bottom.set_xticks(idx)
    fig.tight_layout()
    return _save(fig, path)
