"""Statistical gates fitted on the labeled fraud distribution.

Each gate scores how far a query lies from fraud: larger score = safer.
A sample passes a gate when its score reaches the gate's calibrated
threshold, and the threshold-relative margin (normalized by an in-fraud
score spread) feeds the confidence weighting downstream.

Two complementary gates are provided: Mahalanobis distance under a
Ledoit-Wolf shrunk covariance (global shape of the fraud cloud) and
k-th-nearest-neighbor distance to the fraud set (local structure).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cholesky, solve_triangular, LinAlgError
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_matrix

JITTER_LADDER = (1e-10, 1e-8, 1e-6)


class GateError(ValueError):
    """Gate cannot be fitted or used as configured."""


def ledoit_wolf_shrinkage(centered: np.ndarray) -> tuple[np.ndarray, float]:
    """Shrunk covariance of pre-centered rows.

    Computes the sample covariance S = (1/n) sum y yT, the scaled identity
    target m I with m = tr(S)/d, and the shrinkage intensity

        rho = min(bbar2, d2) / d2,
        d2 = ||S - m I||_F^2 / d,
        bbar2 = (1/(n^2 d)) sum_i ||y_i y_iT - S||_F^2,

    returning (rho m I + (1 - rho) S, rho). rho is 0 when d2 is 0 (S already
    a multiple of the identity, including the all-zero degenerate case).
    """
    Y = check_matrix(centered, "centered")
    n, d = Y.shape
    if n < 2:
        raise GateError(f"covariance needs at least 2 samples, got {n}")
    S = (Y.T @ Y) / n
    m = np.trace(S) / d
    d2 = np.sum((S - m * np.eye(d)) ** 2) / d
    if d2 == 0.0:
        return S.copy(), 0.0
    # sum_i ||y_i y_iT - S||_F^2 = sum_i ||y_i||^4 - 2 sum_i y_iT S y_i + n ||S||^2
    # (nonnegative by construction; cancellation can leave a tiny negative)
    sq_norms = np.einsum("ij,ij->i", Y, Y)
    quad = np.einsum("ij,jk,ik->i", Y, S, Y)
    total = np.sum(sq_norms**2) - 2.0 * np.sum(quad) + n * np.sum(S**2)
    bbar2 = max(total, 0.0) / (n**2 * d)
    b2 = min(bbar2, d2)
    rho = b2 / d2
    sigma_star = rho * m * np.eye(d) + (1.0 - rho) * S
    return sigma_star, float(rho)


def _cholesky_with_jitter(
    sigma: np.ndarray, ladder: tuple[float, ...] = JITTER_LADDER
) -> tuple[np.ndarray, np.ndarray]:
    """Lower Cholesky factor, adding laddered jitter eps*m*I on failure.

    Returns (chol, possibly-jittered sigma). With m = tr(sigma)/d = 0 the
    ladder adds nothing, so fully degenerate input (e.g. every fraud vector
    identical) fails here by design.
    """
    d = sigma.shape[0]
    m = np.trace(sigma) / d
    for eps in (0.0,) + tuple(ladder):
        candidate = sigma + eps * m * np.eye(d)
        try:
            return cholesky(candidate, lower=True), candidate
        except LinAlgError:
            continue
    raise GateError(
        "covariance not positive definite after jitter ladder "
        f"(trace/d = {m:.3e}); input is pathological"
    )


def _median_abs_deviation(values: np.ndarray) -> float:
    med = float(np.median(values))
    mad = float(np.median(np.abs(values - med)))
    return mad if mad > 0.0 else 1.0


class _GateBase(BaseEstimator):
    """Shared pass/margin logic; subclasses implement fit and score_samples."""

    name: str = "gate"

    def __init__(self):
        self.threshold_: float | None = None
        self.margin_scale_: float = 1.0

    def score_samples(self, X) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def set_threshold(self, tau: float) -> None:
        self.threshold_ = float(tau)

    def decide(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Pass flags and normalized margins for each row of X.

        pass = score >= threshold (boundary passes); margin is the
        threshold excess in margin_scale units, negative for failures.
        """
        if self.threshold_ is None:
            raise GateError(f"gate {self.name!r} has no calibrated threshold")
        scores = self.score_samples(X)
        margins = (scores - self.threshold_) / self.margin_scale_
        return scores >= self.threshold_, margins


class MahalanobisGate(_GateBase):
    """Global distance from the fraud mean under a shrunk covariance.

    fit() expects standardized fraud vectors; at least dim+1 samples are
    recommended so the sample covariance carries signal, 2 are required.

    Attributes:
        mean_: Fraud mean.
        covariance_: Shrunk (and possibly jittered) covariance.
        shrinkage_: Ledoit-Wolf intensity in [0, 1].
        chol_: Cached lower Cholesky factor of covariance_.
        margin_scale_: Median absolute deviation of in-fraud scores.
    """

    name = "mahalanobis"

    def __init__(self, jitter_ladder: tuple[float, ...] = JITTER_LADDER):
        super().__init__()
        self.jitter_ladder = jitter_ladder

    def fit(self, X, y=None) -> "MahalanobisGate":
        X = check_matrix(X, "X")
        if X.shape[0] < 2:
            raise GateError(
                f"mahalanobis gate needs at least 2 fraud samples, got {X.shape[0]}"
            )
        self.mean_ = X.mean(axis=0)
        sigma_star, rho = ledoit_wolf_shrinkage(X - self.mean_)
        self.chol_, self.covariance_ = _cholesky_with_jitter(
            sigma_star, tuple(self.jitter_ladder)
        )
        self.shrinkage_ = rho
        self.margin_scale_ = _median_abs_deviation(self.score_samples(X))
        return self

    def score_samples(self, X) -> np.ndarray:
        """sqrt((x - mu)T Sigma^-1 (x - mu)) via triangular solve."""
        check_fitted(self, "chol_")
        X = check_matrix(X, "X", n_features=self.mean_.shape[0])
        diff = X - self.mean_
        z = solve_triangular(self.chol_, diff.T, lower=True)
        return np.sqrt(np.einsum("ij,ij->j", z, z))

    def to_dict(self) -> dict:
        check_fitted(self, "chol_")
        return {
            "type": "mahalanobis",
            "mean": self.mean_.tolist(),
            "covariance": self.covariance_.tolist(),
            "shrinkage": self.shrinkage_,
            "threshold": self.threshold_,
            "margin_scale": self.margin_scale_,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MahalanobisGate":
        gate = cls()
        gate.mean_ = np.asarray(payload["mean"], dtype=np.float64)
        gate.covariance_ = np.asarray(payload["covariance"], dtype=np.float64)
        gate.shrinkage_ = float(payload["shrinkage"])
        gate.chol_ = cholesky(gate.covariance_, lower=True)
        gate.threshold_ = payload["threshold"]
        gate.margin_scale_ = float(payload["margin_scale"])
        return gate


class KnnDensityGate(_GateBase):
    """Euclidean distance to the k-th nearest fraud point.

    The statistic is the k-th order statistic of distances to the stored
    reference set, computed by exact brute-force scan (fine at desk scale).
    margin_scale_ comes from leave-one-out scores over the reference set,
    with the neighbor rank clamped to n-1 since a point cannot be its own
    neighbor.
    """

    name = "knn_density"

    def __init__(self, k: int = 5):
        super().__init__()
        self.k = k

    def fit(self, X, y=None) -> "KnnDensityGate":
        X = check_matrix(X, "X")
        n = X.shape[0]
        if n < 1:
            raise GateError("knn gate needs a non-empty fraud reference set")
        if not 1 <= self.k <= n:
            raise GateError(f"k={self.k} out of range for {n} reference points")
        self.reference_ = X.copy()
        self.margin_scale_ = self._loo_margin_scale()
        return self

    def _loo_margin_scale(self) -> float:
        n = self.reference_.shape[0]
        if n < 2:
            return 1.0
        d2 = _pairwise_sq_dists(self.reference_, self.reference_)
        np.fill_diagonal(d2, np.inf)
        rank = min(self.k, n - 1)
        kth = np.partition(d2, rank - 1, axis=1)[:, rank - 1]
        return _median_abs_deviation(np.sqrt(kth))

    def score_samples(self, X) -> np.ndarray:
        check_fitted(self, "reference_")
        X = check_matrix(X, "X", n_features=self.reference_.shape[1])
        scores = np.empty(X.shape[0])
        # chunked so the distance matrix stays small on big candidate sets
        for start in range(0, X.shape[0], 4096):
            block = X[start : start + 4096]
            d2 = _pairwise_sq_dists(block, self.reference_)
            kth = np.partition(d2, self.k - 1, axis=1)[:, self.k - 1]
            scores[start : start + block.shape[0]] = np.sqrt(np.maximum(kth, 0.0))
        return scores

    def to_dict(self) -> dict:
        check_fitted(self, "reference_")
        return {
            "type": "knn_density",
            "k": self.k,
            "reference": self.reference_.tolist(),
            "threshold": self.threshold_,
            "margin_scale": self.margin_scale_,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "KnnDensityGate":
        gate = cls(k=int(payload["k"]))
        gate.reference_ = np.asarray(payload["reference"], dtype=np.float64)
        gate.threshold_ = payload["threshold"]
        gate.margin_scale_ = float(payload["margin_scale"])
        return gate


def _pairwise_sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (len(A), len(B))."""
    aa = np.einsum("ij,ij->i", A, A)[:, None]
    bb = np.einsum("ij,ij->i", B, B)[None, :]
    return np.maximum(aa + bb - 2.0 * (A @ B.T), 0.0)


GATE_TYPES = {"mahalanobis": MahalanobisGate, "knn_density": KnnDensityGate}


def gate_from_dict(payload: dict) -> _GateBase:
    try:
        cls = GATE_TYPES[payload["type"]]
    except KeyError:
        raise GateError(f"unknown gate type {payload.get('type')!r}") from None
    return cls.from_dict(payload)
