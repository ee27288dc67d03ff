"""Input validation helpers shared by the estimators in this package."""

from __future__ import annotations

import numpy as np


def check_matrix(X, name: str = "X", n_features: int | None = None) -> np.ndarray:
    """Coerce *X* to a 2-D float64 array with finite entries.

    Args:
        X: Array-like of shape (n_samples, n_features).
        name: Argument name used in error messages.
        n_features: If given, enforce this column count.

    Returns:
        A C-contiguous float64 ndarray.

    Raises:
        ValueError: If the array is not 2-D, has a wrong column count, or
            contains NaN/Inf.
    """
    arr = np.ascontiguousarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if n_features is not None and arr.shape[1] != n_features:
        raise ValueError(
            f"{name} has {arr.shape[1]} features, expected {n_features}"
        )
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_vector(x, name: str = "x", length: int | None = None) -> np.ndarray:
    """Coerce *x* to a 1-D float64 array with finite entries."""
    arr = np.asarray(x, dtype=np.float64).ravel()
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {length}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_fitted(estimator, attribute: str) -> None:
    """Raise if *estimator* lacks a fitted attribute (sklearn convention)."""
    if getattr(estimator, attribute, None) is None:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )
