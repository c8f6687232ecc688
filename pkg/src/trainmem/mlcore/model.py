"""Persisted ensemble estimator: feature scaling, class mapping, training
orchestration and cross-validation."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..archspec import ACTIVATIONS
from ..dataset import FEATURE_COLUMNS, BinScheme, stratified_kfold, stratified_split
from .metrics import Metrics, classification_metrics
from .network import EnsembleConfig, Member, TrainHyper, ensemble_predict, init_ensemble, train_member

FORMAT_VERSION = 1
LOG_FEATURES = ("total_params", "total_activations", "act_x_batch")


@dataclass(frozen=True)
class Scaler:
    """log1p on the heavy-tailed count columns, then standardization."""

    log_columns: tuple[int, ...]
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, columns: Sequence[str] = FEATURE_COLUMNS) -> "Scaler":
        log_cols = tuple(i for i, c in enumerate(columns) if c in LOG_FEATURES)
        T = cls._log(np.asarray(X, dtype=np.float64), log_cols)
        std = T.std(axis=0)
        std[std == 0.0] = 1.0
        return cls(log_cols, T.mean(axis=0), std)

    @staticmethod
    def _log(X: np.ndarray, cols: tuple[int, ...]) -> np.ndarray:
        X = X.copy()
        X[:, list(cols)] = np.log1p(X[:, list(cols)])
        return X

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (self._log(np.asarray(X, dtype=np.float64), self.log_columns) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"log_columns": list(self.log_columns), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(tuple(d["log_columns"]), np.asarray(d["mean"], float), np.asarray(d["std"], float))


@dataclass
class EnsembleModel:
    members: list[Member]
    scaler: Scaler
    classes: list[int]
    target: str = "mem"
    bin_scheme: BinScheme | None = None
    families: list[str] = field(default_factory=list)
    feature_columns: tuple[str, ...] = FEATURE_COLUMNS
    activation_order: tuple[str, ...] = ACTIVATIONS

    def predict(self, X_raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Class probabilities (over ``classes``) and predicted bin labels."""
        X_raw = np.atleast_2d(np.asarray(X_raw, dtype=np.float64))
        probs, idx = ensemble_predict(self.members, self.scaler.transform(X_raw))
        return probs, np.asarray(self.classes)[idx]

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "trainmem-ensemble",
                "version": FORMAT_VERSION,
                "target": self.target,
                "classes": list(self.classes),
                "bin_scheme": self.bin_scheme.to_dict() if self.bin_scheme else None,
                "families": list(self.families),
                "feature_columns": list(self.feature_columns),
                "activation_order": list(self.activation_order),
                "scaler": self.scaler.to_dict(),
                "members": [m.to_dict() for m in self.members],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "EnsembleModel":
        d = json.loads(text)
        if d.get("format") != "trainmem-ensemble":
            raise ValueError("not a trainmem ensemble file")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        if tuple(d["feature_columns"]) != FEATURE_COLUMNS:
            raise ValueError("model was trained on a different feature set")
        return cls(
            members=[Member.from_dict(m) for m in d["members"]],
            scaler=Scaler.from_dict(d["scaler"]),
            classes=list(d["classes"]),
            target=d["target"],
            bin_scheme=BinScheme.from_dict(d["bin_scheme"]) if d["bin_scheme"] else None,
            families=list(d["families"]),
            feature_columns=tuple(d["feature_columns"]),
            activation_order=tuple(d["activation_order"]),
        )


def _train_one(args):
    member, X, y, Xv, yv, hyper = args
    trained, _ = train_member(member, X, y, Xv, yv, hyper)
    return trained


def train_members(
    members: Sequence[Member],
    X: np.ndarray,
    y: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    hyper: TrainHyper,
    jobs: int = 1,
) -> list[Member]:
    """Train members independently; member ``m`` uses seed ``hyper.seed + m``."""
    tasks = [
        (m, X, y, X_val, y_val, TrainHyper(**{**hyper.__dict__, "seed": hyper.seed + i}))
        for i, m in enumerate(members)
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            return list(pool.map(_train_one, tasks))
    return [_train_one(t) for t in tasks]


def _class_index(y: np.ndarray, classes: Sequence[int]) -> np.ndarray:
    return np.searchsorted(np.asarray(classes), y)


def fit_ensemble(
    X_raw: np.ndarray,
    y: np.ndarray,
    config: EnsembleConfig,
    hyper: TrainHyper,
    val_idx: np.ndarray | None = None,
    val_fraction: float = 0.3,
    target: str = "mem",
    bin_scheme: BinScheme | None = None,
    families: Sequence[str] = (),
    classes: Sequence[int] | None = None,
    jobs: int = 1,
) -> EnsembleModel:
    """Fit scaling and an ensemble on ``X_raw``/``y`` (bin labels).

    Rows in ``val_idx`` (default: a stratified ``val_fraction``) only drive
    best-epoch selection.
    """
    X_raw = np.asarray(X_raw, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    classes = sorted(set(y.tolist())) if classes is None else list(classes)
    yi = _class_index(y, classes)
    if val_idx is None:
        train_idx, val_idx = stratified_split(yi, val_fraction, config.seed)
    else:
        train_idx = np.setdiff1d(np.arange(len(y)), val_idx)
    scaler = Scaler.fit(X_raw[train_idx])
    X = scaler.transform(X_raw)
    members = init_ensemble(config, X.shape[1], len(classes))
    trained = train_members(members, X[train_idx], yi[train_idx], X[val_idx], yi[val_idx], hyper, jobs)
    return EnsembleModel(trained, scaler, classes, target, bin_scheme, sorted(set(families)))


def evaluate(model: EnsembleModel, X_raw: np.ndarray, y: np.ndarray) -> Metrics:
    """Metrics over the model's classes; labels the model never saw count as errors."""
    _, pred = model.predict(X_raw)
    known = {c: i for i, c in enumerate(model.classes)}
    n = len(model.classes)
    true_idx = np.array([known.get(int(c), n) for c in y], dtype=np.int64)
    pred_idx = np.array([known[int(c)] for c in pred], dtype=np.int64)
    extra = int((true_idx == n).any())
    return classification_metrics(pred_idx, true_idx, n + extra)


@dataclass(frozen=True)
class CVResult:
    folds: list[Metrics]
    classes: list[int]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([m.accuracy for m in self.folds]))

    @property
    def mean_macro_f1(self) -> float:
        return float(np.mean([m.macro_f1 for m in self.folds]))

    def mean_recall(self) -> list[float]:
        return np.mean([m.per_class_recall for m in self.folds], axis=0).tolist()

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "accuracy": self.mean_accuracy,
            "macro_f1": self.mean_macro_f1,
            "per_class_recall": self.mean_recall(),
            "folds": [m.to_dict() for m in self.folds],
        }


def cross_validate(
    X_raw: np.ndarray,
    y: np.ndarray,
    config: EnsembleConfig,
    hyper: TrainHyper,
    k: int = 3,
    seed: int = 0,
    jobs: int = 1,
) -> CVResult:
    """Stratified k-fold: each fold trains on 70% of the pool and scores the
    ensemble on the remaining 30%."""
    y = np.asarray(y, dtype=np.int64)
    classes = sorted(set(y.tolist()))
    yi = _class_index(y, classes)
    results = []
    for train_idx, val_idx in stratified_kfold(yi, k, seed):
        rows = np.concatenate([train_idx, val_idx])
        local_val = np.arange(len(train_idx), len(rows))
        model = fit_ensemble(
            X_raw[rows], y[rows], config, hyper, val_idx=local_val, classes=classes, jobs=jobs
        )
        _, pred = model.predict(X_raw[val_idx])
        results.append(classification_metrics(_class_index(pred, classes), yi[val_idx], len(classes)))
    return CVResult(results, classes)
