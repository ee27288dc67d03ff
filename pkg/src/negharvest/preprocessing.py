"""Feature standardization.

Hashing and distance gates both assume comparable feature scales, so the
whole pipeline shares one Standardizer, fit by default on the unlabeled
population (the stratification target).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_fitted, check_matrix
from .data import Dataset, Label


class FitError(ValueError):
    """Not enough data to fit."""


class Standardizer(BaseEstimator, TransformerMixin):
    """Center/scale transform: (x - mean) / scale, per feature.

    scale is the population standard deviation; constant features keep
    scale 1 so dimensionality is stable across pipeline stages.

    Attributes:
        mean_: Per-feature mean of the fitting subset.
        scale_: Per-feature population std, zeros replaced by 1.
    """

    def __init__(self):
        self.mean_: np.ndarray | None = None
        self.scale_: np.ndarray | None = None

    def fit(self, X, y=None) -> "Standardizer":
        X = check_matrix(X, "X")
        if X.shape[0] < 2:
            raise FitError(
                f"standardizer needs at least 2 samples, got {X.shape[0]}"
            )
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)  # population std (ddof=0)
        scale[scale == 0.0] = 1.0
        self.scale_ = scale
        return self

    def transform(self, X) -> np.ndarray:
        check_fitted(self, "mean_")
        X = check_matrix(X, "X", n_features=self.mean_.shape[0])
        return (X - self.mean_) / self.scale_

    def to_dict(self) -> dict:
        check_fitted(self, "mean_")
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "Standardizer":
        obj = cls()
        obj.mean_ = np.asarray(payload["mean"], dtype=np.float64)
        obj.scale_ = np.asarray(payload["scale"], dtype=np.float64)
        return obj


def fit_standardizer(
    data: Dataset, subset: tuple[Label, ...] = (Label.UNLABELED,)
) -> Standardizer:
    """Fit a Standardizer on the rows of *data* whose label is in *subset*."""
    idx = data.indices_with_labels(subset)
    if idx.size < 2:
        raise FitError(
            f"standardizer subset {[s.value for s in subset]} selects "
            f"{idx.size} samples, need at least 2"
        )
    return Standardizer().fit(data.features[idx])
