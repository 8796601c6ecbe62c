"""Classification losses for the homogeneous linear SVM and its regularized objective.

The per-sample functions take a single feature vector ``x``, a label ``y`` in
{-1, +1} and the hyperplane normal ``w``.  The batch helpers operate on a
feature matrix ``X`` of shape ``(L, n)`` and a label vector of shape ``(L,)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class LossKind(str, enum.Enum):
    SQUARED_HINGE = "squared_hinge"
    LOG = "log"

    @classmethod
    def parse(cls, value: "LossKind | str") -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown loss {value!r}; expected one of {[k.value for k in cls]}"
            ) from None


@dataclass(frozen=True)
class Objective:
    """Regularized empirical risk ``lam/2 ||w||^2 + mean(loss)``."""

    loss: LossKind = LossKind.SQUARED_HINGE
    lam: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        if not self.lam >= 0:
            raise ValueError(f"regularization weight must be >= 0, got {self.lam}")


def _check_dims(x: np.ndarray, w: np.ndarray) -> None:
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]}, w has {w.shape[0]}")


def log1pexp(z):
    """Stable ``log(1 + exp(z))``, elementwise."""
    z = np.asarray(z, dtype=float)
    # z > 0 branch rewritten as z + log(1 + exp(-z))
    out = np.log1p(np.exp(-np.abs(z)))
    return np.where(z > 0, z + out, out)


def sigmoid(z):
    """Logistic function evaluated without overflow."""
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def loss_value(kind: LossKind | str, x, y: float, w) -> float:
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    _check_dims(x, w)
    return float(batch_loss_values(kind, x[None, :], np.array([y], dtype=float), w)[0])


def loss_gradient(kind: LossKind | str, x, y: float, w) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    _check_dims(x, w)
    return batch_loss_gradient_sum(kind, x[None, :], np.array([y], dtype=float), w)


def batch_loss_values(kind: LossKind | str, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-row loss values for a batch."""
    kind = LossKind.parse(kind)
    _check_dims(X, w)
    margins = y * (X @ w)
    if kind is LossKind.SQUARED_HINGE:
        slack = np.maximum(0.0, 1.0 - margins)
        return slack * slack
    return log1pexp(-margins)


def batch_loss_gradient_sum(kind: LossKind | str, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Sum over rows of the per-sample loss gradients."""
    kind = LossKind.parse(kind)
    _check_dims(X, w)
    margins = y * (X @ w)
    if kind is LossKind.SQUARED_HINGE:
        # exactly zero at margin >= 1, so the boundary contributes nothing
        coef = -2.0 * y * np.maximum(0.0, 1.0 - margins)
    else:
        coef = -y * sigmoid(-margins)
    return coef @ X


def instantaneous_gradient(obj: Objective, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Minibatch stochastic gradient ``lam*w + (1/L) sum_i grad loss_i``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w = np.asarray(w, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty minibatch")
    if X.shape[0] != y.shape[0]:
        raise ValueError("feature and label counts differ")
    return obj.lam * w + batch_loss_gradient_sum(obj.loss, X, y, w) / X.shape[0]


def average_objective(obj: Objective, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    """Exact ``F(w)`` over a whole training set (reporting only)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w = np.asarray(w, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    return float(0.5 * obj.lam * (w @ w) + np.mean(batch_loss_values(obj.loss, X, y, w)))
