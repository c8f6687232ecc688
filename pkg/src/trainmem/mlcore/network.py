"""Feedforward ensemble members with hand-written backprop.

A member is ``[Linear -> BatchNorm -> ReLU -> Dropout] * depth -> Linear``.
Hidden Linear layers carry no bias because the batch-norm shift follows
immediately.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import TrainingError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble shape.

    With ``log2_widths`` (the default) the width bounds are exponents, so
    8 and 4 mean 256 down to 16 neurons; otherwise they are neuron counts.
    """

    n_members: int = 5
    hidden_layers: tuple[int, int] = (1, 8)
    max_width: int = 8
    min_width: int = 4
    log2_widths: bool = True
    dropout: tuple[float, float] = (0.0, 0.3)
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.hidden_layers
        if self.n_members < 1 or not 1 <= lo <= hi:
            raise ValueError("need n_members >= 1 and 1 <= min hidden layers <= max")
        if not 1 <= self.min_width <= self.max_width:
            raise ValueError("need 1 <= min_width <= max_width")
        if not 0.0 <= self.dropout[0] <= self.dropout[1] < 1.0:
            raise ValueError("dropout range must be ordered within [0, 1)")

    def width_bounds(self) -> tuple[int, int]:
        if self.log2_widths:
            return 2**self.min_width, 2**self.max_width
        return self.min_width, self.max_width


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 60
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("need learning_rate > 0 and betas in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("need epochs >= 0 and batch_size >= 1")


@dataclass(eq=False)
class Member:
    widths: list[int]
    n_features: int
    n_classes: int
    params: dict[str, np.ndarray]
    running_mean: list[np.ndarray]
    running_var: list[np.ndarray]
    dropout: float = 0.0
    mode: str = "eval"
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def depth(self) -> int:
        return len(self.widths)

    def copy(self) -> "Member":
        clone = copy.deepcopy(self)
        clone.cache = {}
        return clone

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "dropout": self.dropout,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "running_mean": [m.tolist() for m in self.running_mean],
            "running_var": [v.tolist() for v in self.running_var],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Member":
        return cls(
            widths=list(d["widths"]),
            n_features=d["n_features"],
            n_classes=d["n_classes"],
            params={k: np.asarray(v, dtype=np.float64) for k, v in d["params"].items()},
            running_mean=[np.asarray(m, dtype=np.float64) for m in d["running_mean"]],
            running_var=[np.asarray(v, dtype=np.float64) for v in d["running_var"]],
            dropout=d.get("dropout", 0.0),
        )


def decaying_widths(depth: int, max_width: int, min_width: int) -> list[int]:
    """Exponential decay from max_width (first layer) to min_width (last)."""
    if depth == 1:
        return [max_width]
    ratio = min_width / max_width
    out = [int(round(max_width * ratio ** (i / (depth - 1)))) for i in range(depth)]
    return [min(max_width, max(min_width, w)) for w in out]


def new_member(
    widths: Sequence[int],
    n_features: int,
    n_classes: int,
    rng: np.random.Generator,
    dropout: float = 0.0,
) -> Member:
    params: dict[str, np.ndarray] = {}
    fan_in = n_features
    for i, w in enumerate(widths):
        params[f"W{i}"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, w))
        params[f"gamma{i}"] = np.ones(w)
        params[f"beta{i}"] = np.zeros(w)
        fan_in = w
    params["W_out"] = rng.normal(0.0, math.sqrt(1.0 / fan_in), size=(fan_in, n_classes))
    params["b_out"] = np.zeros(n_classes)
    return Member(
        widths=list(widths),
        n_features=n_features,
        n_classes=n_classes,
        params=params,
        running_mean=[np.zeros(w) for w in widths],
        running_var=[np.ones(w) for w in widths],
        dropout=dropout,
    )


def init_ensemble(config: EnsembleConfig, feature_dim: int, n_classes: int) -> list[Member]:
    if feature_dim < 1 or n_classes < 1:
        raise ValueError("feature_dim and n_classes must be >= 1")
    lo_w, hi_w = config.width_bounds()
    members = []
    for rng in (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(config.n_members)):
        depth = int(rng.integers(config.hidden_layers[0], config.hidden_layers[1] + 1))
        rate = float(rng.uniform(*config.dropout))
        members.append(new_member(decaying_widths(depth, hi_w, lo_w), feature_dim, n_classes, rng, rate))
    return members


# --------------------------------------------------------------------------- #
# forward / backward


def forward(
    member: Member,
    X: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    update_stats: bool = True,
    keep_cache: bool = False,
) -> np.ndarray:
    """Logits for ``X``.

    Train mode normalises with minibatch statistics (and folds them into
    the running statistics when ``update_stats``) and applies dropout when
    an ``rng`` is given.  Eval mode uses the running statistics and never
    mutates the member.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != member.n_features:
        raise ValueError(f"expected input with {member.n_features} columns, got shape {X.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    p = member.params
    cache: dict = {"X": X, "layers": [], "mode": mode}
    h = X
    n = X.shape[0]
    for i in range(member.depth):
        z = h @ p[f"W{i}"]
        if mode == "train":
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            if update_stats:
                unbiased = var * n / (n - 1) if n > 1 else var
                member.running_mean[i] = (1 - BN_MOMENTUM) * member.running_mean[i] + BN_MOMENTUM * mu
                member.running_var[i] = (1 - BN_MOMENTUM) * member.running_var[i] + BN_MOMENTUM * unbiased
        else:
            mu, var = member.running_mean[i], member.running_var[i]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        zhat = (z - mu) * inv_std
        y = p[f"gamma{i}"] * zhat + p[f"beta{i}"]
        a = np.maximum(y, 0.0)
        mask = None
        if mode == "train" and rng is not None and member.dropout > 0.0:
            mask = (rng.random(a.shape) >= member.dropout) / (1.0 - member.dropout)
            a = a * mask
        cache["layers"].append((h, zhat, inv_std, y, mask))
        h = a
    cache["h_out"] = h
    logits = h @ p["W_out"] + p["b_out"]
    if keep_cache:
        member.cache = cache
    return logits


def backward(member: Member, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every parameter, given dL/dlogits and
    the cache of the preceding ``forward(..., keep_cache=True)``."""
    cache = member.cache
    if not cache:
        raise RuntimeError("backward called without a cached forward pass")
    p = member.params
    grads: dict[str, np.ndarray] = {}
    h = cache["h_out"]
    grads["W_out"] = h.T @ dlogits
    grads["b_out"] = dlogits.sum(axis=0)
    dh = dlogits @ p["W_out"].T
    train = cache["mode"] == "train"
    for i in range(member.depth - 1, -1, -1):
        h_in, zhat, inv_std, y, mask = cache["layers"][i]
        if mask is not None:
            dh = dh * mask
        dy = dh * (y > 0.0)
        grads[f"gamma{i}"] = (dy * zhat).sum(axis=0)
        grads[f"beta{i}"] = dy.sum(axis=0)
        dzhat = dy * p[f"gamma{i}"]
        if train:
            n = dzhat.shape[0]
            dz = (inv_std / n) * (n * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0))
        else:
            dz = dzhat * inv_std
        grads[f"W{i}"] = h_in.T @ dz
        dh = dz @ p[f"W{i}"].T
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_z - shifted[rows, labels]))
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


# --------------------------------------------------------------------------- #
# optimisation


def adam_state(params: dict[str, np.ndarray]) -> dict:
    return {"m": {k: np.zeros_like(v) for k, v in params.items()}, "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict,
    hyper: TrainHyper,
    t: int,
) -> tuple[dict[str, np.ndarray], dict]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    b1, b2 = hyper.beta1, hyper.beta2
    new_params, m_new, v_new = {}, {}, {}
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, w in params.items():
        g = grads[k]
        m = b1 * state["m"][k] + (1.0 - b1) * g
        v = b2 * state["v"][k] + (1.0 - b2) * g * g
        new_params[k] = w - hyper.learning_rate * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        m_new[k], v_new[k] = m, v
    return new_params, {"m": m_new, "v": v_new}


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1


def train_member(
    member: Member,
    X: np.ndarray,
    y: np.ndarray,
    X_val: np.ndarray | None,
    y_val: np.ndarray | None,
    hyper: TrainHyper,
) -> tuple[Member, TrainHistory]:
    """Minibatch Adam on cross-entropy; returns the best-validation snapshot.

    Without validation rows the training loss selects the snapshot.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    has_val = X_val is not None and y_val is not None and len(y_val) > 0
    history = TrainHistory()
    work = member.copy()
    best = member.copy()
    best_loss = math.inf
    state = adam_state(work.params)
    rng = np.random.default_rng(hyper.seed)
    t = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(X.shape[0])
        losses = []
        for start in range(0, X.shape[0], hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            logits = forward(work, X[idx], "train", rng=rng, keep_cache=True)
            loss, dlogits = cross_entropy(logits, y[idx])
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, step {t + 1}: loss={loss}, "
                    f"max |logit|={np.abs(logits).max():.3g}, lr={hyper.learning_rate}"
                )
            t += 1
            work.params, state = adam_step(work.params, backward(work, dlogits), state, hyper, t)
            losses.append(loss * len(idx))
        work.cache = {}
        history.train_loss.append(float(sum(losses) / X.shape[0]))
        if has_val:
            val_loss, _ = cross_entropy(forward(work, X_val, "eval"), y_val)
            history.val_loss.append(val_loss)
            score = val_loss
        else:
            score = history.train_loss[-1]
        if not math.isfinite(score):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        if score < best_loss:
            best_loss = score
            best = work.copy()
            history.best_epoch = epoch
    best.mode = "eval"
    return best, history


def ensemble_predict(members: Sequence[Member], X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean of member softmax outputs and its argmax."""
    if not members:
        raise ValueError("empty ensemble")
    shapes = {(m.n_features, m.n_classes) for m in members}
    if len(shapes) != 1:
        raise ValueError(f"members disagree on feature/class dimensions: {sorted(shapes)}")
    probs = sum(softmax(forward(m, X, "eval")) for m in members) / len(members)
    return probs, probs.argmax(axis=1)


# --------------------------------------------------------------------------- #
# gradient verification


def _loss_fn(member: Member, X: np.ndarray, y: np.ndarray, mode: str) -> float:
    loss, _ = cross_entropy(forward(member, X, mode, update_stats=False), y)
    return loss


def analytic_grads(member: Member, X: np.ndarray, y: np.ndarray, mode: str = "train") -> dict[str, np.ndarray]:
    logits = forward(member, X, mode, update_stats=False, keep_cache=True)
    _, dlogits = cross_entropy(logits, y)
    grads = backward(member, dlogits)
    member.cache = {}
    return grads


def gradient_check(
    member: Member,
    X: np.ndarray,
    y: np.ndarray,
    eps: float = 1e-5,
    mode: str = "train",
    grad_fn: Callable[[Member, np.ndarray, np.ndarray, str], dict] | None = None,
    floor: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Dropout is disabled and running statistics are frozen, so the loss is
    a deterministic function of the parameters in either mode.  The error
    per entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    work = member.copy()
    work.dropout = 0.0
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    grads = (grad_fn or analytic_grads)(work, X, y, mode)
    worst = 0.0
    for name, w in work.params.items():
        a = grads[name]
        it = np.nditer(w, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = w[ix]
            w[ix] = orig + eps
            plus = _loss_fn(work, X, y, mode)
            w[ix] = orig - eps
            minus = _loss_fn(work, X, y, mode)
            w[ix] = orig
            num = (plus - minus) / (2.0 * eps)
            denom = max(abs(a[ix]), abs(num), floor)
            worst = max(worst, abs(a[ix] - num) / denom)
    return worst
