"""Monte-Carlo dropweight uncertainty estimation for small classifiers.

The pipeline: train a fully-connected net whose weights are individually
dropped during stochastic passes, collect T softmax samples per item, reduce
them to predictive-mean / entropy / BALD reports, relate the uncertainty to
per-item error, and evaluate referral of the most doubtful predictions.

Plotting lives in :mod:`dropuq.plots` and the command-line surface in
:mod:`dropuq.cli`; neither is imported here so that library use stays light.
"""

from .analysis import (
    ConfusionMatrix,
    ErrorProfile,
    GroupStats,
    GroupSummary,
    confusion_matrix,
    error_profile,
    group_summary,
    one_hot,
    save_confusion,
    spearman_rho,
    summary_to_dict,
    wasserstein_discrete,
)
from .errors import (
    DropUQError,
    NumericalError,
    ParseError,
    StructuralError,
    UndefinedCorrelationError,
    ValidationError,
)
from .mc_store import (
    Aligned,
    LabelSet,
    McPredictionSet,
    align,
    load_labels,
    load_mc_predictions,
    save_labels,
    save_mc_predictions,
)
from .metrics import (
    UncertaintyReport,
    bald,
    build_report,
    expected_entropy,
    load_report,
    predictive_entropy,
    predictive_mean,
    save_report,
)
from .net import (
    DropweightNet,
    SyntheticDataset,
    TrainResult,
    forward,
    generate_synthetic,
    init_network,
    input_gradient_saliency,
    load_checkpoint,
    load_features,
    loss_and_gradients,
    mc_predict,
    sample_masks,
    save_checkpoint,
    save_features,
    train,
    weighted_ce_loss,
)
from .referral import (
    RandomBaseline,
    ReferralCurve,
    ReferralPoint,
    combined_accuracy,
    random_referral_baseline,
    refer_by_fraction,
    refer_by_threshold,
    save_baseline,
    save_curve,
)

__version__ = "0.1.0"

__all__ = [
    "Aligned",
    "ConfusionMatrix",
    "DropUQError",
    "DropweightNet",
    "ErrorProfile",
    "GroupStats",
    "GroupSummary",
    "LabelSet",
    "McPredictionSet",
    "NumericalError",
    "ParseError",
    "RandomBaseline",
    "ReferralCurve",
    "ReferralPoint",
    "StructuralError",
    "SyntheticDataset",
    "TrainResult",
    "UncertaintyReport",
    "UndefinedCorrelationError",
    "ValidationError",
    "align",
    "bald",
    "build_report",
    "combined_accuracy",
    "confusion_matrix",
    "error_profile",
    "expected_entropy",
    "forward",
    "generate_synthetic",
    "group_summary",
    "init_network",
    "input_gradient_saliency",
    "load_checkpoint",
    "load_features",
    "load_labels",
    "load_mc_predictions",
    "load_report",
    "loss_and_gradients",
    "mc_predict",
    "one_hot",
    "predictive_entropy",
    "predictive_mean",
    "random_referral_baseline",
    "refer_by_fraction",
    "refer_by_threshold",
    "sample_masks",
    "save_baseline",
    "save_checkpoint",
    "save_confusion",
    "save_curve",
    "save_features",
    "save_labels",
    "save_mc_predictions",
    "save_report",
    "spearman_rho",
    "summary_to_dict",
    "train",
    "weighted_ce_loss",
]
