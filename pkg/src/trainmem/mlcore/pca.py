from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _kernels

JACOBI_TOL = 1e-10


@dataclass(frozen=True)
class PCAResult:
    components: np.ndarray  # (n_features, k), orthonormal columns
    projections: np.ndarray  # (n_rows, k)
    explained_ratio: np.ndarray  # (k,), nonincreasing
    eigenvalues: np.ndarray  # all, descending


def standardize(X: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns.  Constant columns keep a unit
    scale and therefore become all zeros."""
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0.0] = 1.0
    return (X - mu) / sd


def pca_project(X: np.ndarray, k: int) -> PCAResult:
    """Principal components of standardized ``X`` via Jacobi eigendecomposition."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("pca_project needs a 2-D array with at least two rows")
    if not 1 <= k <= X.shape[1]:
        raise ValueError(f"k must lie in [1, {X.shape[1]}], got {k}")
    Z = standardize(X)
    cov = Z.T @ Z / (Z.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    w, V, _ = _kernels.jacobi_eigh(cov, JACOBI_TOL)
    order = np.argsort(-w, kind="stable")
    w = np.clip(w[order], 0.0, None)
    V = V[:, order]
    # sign convention: largest-magnitude loading of each component is positive
    flip = np.sign(V[np.abs(V).argmax(axis=0), np.arange(V.shape[1])])
    V = V * np.where(flip == 0, 1.0, flip)
    total = w.sum()
    ratios = w / total if total > 0 else np.zeros_like(w)
    comps = V[:, :k]
    return PCAResult(comps, Z @ comps, ratios[:k], w)
