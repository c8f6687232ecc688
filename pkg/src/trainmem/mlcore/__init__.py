"""From-scratch feedforward ensemble classifier, metrics and PCA."""

from .metrics import Metrics, classification_metrics, confusion_matrix
from .model import CVResult, EnsembleModel, Scaler, cross_validate, evaluate, fit_ensemble
from .network import (
    EnsembleConfig,
    Member,
    TrainHyper,
    adam_step,
    backward,
    cross_entropy,
    decaying_widths,
    ensemble_predict,
    forward,
    gradient_check,
    init_ensemble,
    softmax,
    train_member,
)
from .pca import PCAResult, pca_project

__all__ = [
    "CVResult",
    "EnsembleConfig",
    "EnsembleModel",
    "Member",
    "Metrics",
    "PCAResult",
    "Scaler",
    "TrainHyper",
    "adam_step",
    "backward",
    "classification_metrics",
    "confusion_matrix",
    "cross_entropy",
    "cross_validate",
    "decaying_widths",
    "ensemble_predict",
    "evaluate",
    "fit_ensemble",
    "forward",
    "gradient_check",
    "init_ensemble",
    "pca_project",
    "softmax",
    "train_member",
]
