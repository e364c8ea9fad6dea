"""One-vs-rest linear max-margin classifier.

Minimizes ``lam/2 * ||w_c||^2 + mean(hinge)`` per class with full-batch
subgradient steps.  The L2 term is applied as a proximal shrink,
``w <- (w - eta * g) / (1 + eta * lam)``, which stays stable for any ``lam``
and drives the weights to zero as ``lam`` grows.  The bias is not
regularized.  No randomness is involved, so training is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DimensionError


@dataclass
class LinearClassifier:
    weights: np.ndarray  # D x K
    bias: np.ndarray  # K

    def decision_function(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weights.shape[0]:
            raise DimensionError(
                f"features of shape {x.shape} for a classifier of dimension {self.weights.shape[0]}")
        return x @ self.weights + self.bias

    def predict(self, features) -> np.ndarray:
        # argmax returns the lowest index on ties
        return np.argmax(self.decision_function(features), axis=1)


def train_linear_classifier(features, labels, lam: float = 1e-4, epochs: int = 300,
                            lr: float = 1.0, n_classes: int | None = None) -> LinearClassifier:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"features {x.shape} do not match {y.shape[0]} labels")
    if len(np.unique(y)) < 2:
        raise ContractError("training a classifier needs at least two classes")
    if lam < 0:
        raise ContractError(f"regularization must be non-negative, got {lam}")
    k = int(n_classes or y.max() + 1)
    n, d = x.shape
    sign = np.where(y[:, None] == np.arange(k)[None, :], 1.0, -1.0)
    w = np.zeros((d, k))
    b = np.zeros(k)
    for t in range(1, epochs + 1):
        eta = lr / np.sqrt(t)
        active = (sign * (x @ w + b) < 1.0) * sign
        gw = -(x.T @ active) / n
        gb = -active.sum(axis=0) / n
        w = (w - eta * gw) / (1.0 + eta * lam)
        b = b - eta * gb
    return LinearClassifier(w, b)
