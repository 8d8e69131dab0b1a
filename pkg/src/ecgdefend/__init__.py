"""Adversarial attacks and defenses for 1D ECG-style signal classifiers."""

from .attacks import (
    AdversarialExample,
    AttackParams,
    KernelBank,
    boundary_attack,
    clip,
    gaussian_kernel,
    hanning_filter,
    pgd_attack,
    sap_attack,
    smooth_perturbation,
)
from .autodiff import (
    ComputeGraph,
    GradientBundle,
    evaluate_with_gradients,
    finite_difference_check,
)
from .data import (
    Dataset,
    Record,
    load_records,
    preprocess_record,
    rebalance,
    split_dataset,
    synthesize_ecg,
)
from .defenses import (
    RegularizerConfig,
    TrainPlan,
    TrainedDefense,
    jacobian_penalty,
    nsr_penalty,
    train_adt,
    train_adversarial,
    train_defense,
    train_distilled,
    train_standard,
)
from .metrics import ConfusionMatrix, MetricsReport, confusion_matrix, f1_scores
from .models import (
    ClassifierModel,
    MixedLossConfig,
    build_model,
    hard_label_loss,
    load_model,
    mixed_loss,
    predict,
    save_model,
    soft_label_loss,
    softmax_with_temperature,
)
from .protocols import parameter_sweep, run_boundary_eval, run_situation

__version__ = "0.1.0"

__all__ = [
    "AdversarialExample",
    "AttackParams",
    "ClassifierModel",
    "ComputeGraph",
    "ConfusionMatrix",
    "Dataset",
    "GradientBundle",
    "KernelBank",
    "MetricsReport",
    "MixedLossConfig",
    "Record",
    "RegularizerConfig",
    "TrainPlan",
    "TrainedDefense",
    "boundary_attack",
    "build_model",
    "clip",
    "confusion_matrix",
    "evaluate_with_gradients",
    "f1_scores",
    "finite_difference_check",
    "gaussian_kernel",
    "hanning_filter",
    "hard_label_loss",
    "jacobian_penalty",
    "load_model",
    "load_records",
    "mixed_loss",
    "nsr_penalty",
    "parameter_sweep",
    "pgd_attack",
    "predict",
    "preprocess_record",
    "rebalance",
    "run_boundary_eval",
    "run_situation",
    "sap_attack",
    "save_model",
    "smooth_perturbation",
    "softmax_with_temperature",
    "soft_label_loss",
    "split_dataset",
    "synthesize_ecg",
    "train_adt",
    "train_adversarial",
    "train_defense",
    "train_distilled",
    "train_standard",
]
