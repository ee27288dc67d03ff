"""Deliberately weak linear probe for measuring training-set quality.

A weighted logistic regression trained by full-batch gradient descent with
a fixed iteration count and step size. Differences between probes trained
on different harvested sets then reflect the sets themselves, not model
capacity or optimizer luck.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_matrix


class ProbeError(ValueError):
    """Probe cannot be trained as requested."""


def loss_and_gradient(
    params: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Weighted logistic loss and its gradient at params = [coef..., bias].

    Loss is (1/sum w) * sum_i w_i * (softplus(z_i) - y_i z_i) with
    z = X @ coef + bias, so rescaling all weights leaves the objective (and
    the fitted boundary) unchanged.
    """
    coef, bias = params[:-1], params[-1]
    z = X @ coef + bias
    w_total = float(sample_weight.sum())
    loss = float(np.sum(sample_weight * (np.logaddexp(0.0, z) - y * z)) / w_total)
    residual = sample_weight * (expit(z) - y) / w_total
    grad = np.concatenate([X.T @ residual, [residual.sum()]])
    return loss, grad


class LogisticProbe(BaseEstimator):
    """Weighted logistic regression via deterministic full-batch descent.

    Parameters:
        iterations: Fixed number of gradient steps.
        learning_rate: Fixed step size.
        standardize: Standardize features internally before fitting (the
            learned transform is reapplied at prediction time).
    """

    def __init__(
        self,
        iterations: int = 500,
        learning_rate: float = 0.5,
        standardize: bool = True,
    ):
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.standardize = standardize

    def fit(self, X, y, sample_weight=None) -> "LogisticProbe":
        X = check_matrix(X, "X")
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != X.shape[0]:
            raise ProbeError("X and y are misaligned")
        classes = np.unique(y)
        if not np.isin(classes, (0.0, 1.0)).all():
            raise ProbeError("y must be binary 0/1")
        if classes.size < 2:
            raise ProbeError("probe needs at least one row of each class")
        if sample_weight is None:
            sample_weight = np.ones(X.shape[0])
        w = np.asarray(sample_weight, dtype=np.float64).ravel()
        if w.shape[0] != X.shape[0] or (w <= 0).any():
            raise ProbeError("sample_weight must be positive and aligned with X")

        if self.standardize:
            self.feature_mean_ = X.mean(axis=0)
            scale = X.std(axis=0)
            scale[scale == 0.0] = 1.0
            self.feature_scale_ = scale
        else:
            self.feature_mean_ = np.zeros(X.shape[1])
            self.feature_scale_ = np.ones(X.shape[1])
        Xs = (X - self.feature_mean_) / self.feature_scale_

        params = np.zeros(X.shape[1] + 1)
        for _ in range(self.iterations):
            _, grad = loss_and_gradient(params, Xs, y, w)
            params = params - self.learning_rate * grad
        self.coef_ = params[:-1]
        self.intercept_ = float(params[-1])
        return self

    def decision_function(self, X) -> np.ndarray:
        check_fitted(self, "coef_")
        X = check_matrix(X, "X", n_features=self.coef_.shape[0])
        Xs = (X - self.feature_mean_) / self.feature_scale_
        return Xs @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(np.int64)
