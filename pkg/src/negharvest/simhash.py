"""SimHash signatures and behavioral bucketing.

Each signature bit is the sign of a projection onto a random hyperplane, so
nearby vectors agree on most bits; grouping by a prefix of the signature
partitions a population into behavioral buckets in a single O(n) pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_matrix

MAX_BITS = 256


@dataclass(frozen=True)
class StratumTable:
    """Partition of sample indices into buckets keyed by signature prefix.

    Keys are '0'/'1' strings of length prefix_bits. Buckets are disjoint and
    jointly cover every stratified sample.
    """

    prefix_bits: int
    buckets: dict[str, np.ndarray]

    @property
    def counts(self) -> dict[str, int]:
        return {key: len(members) for key, members in self.buckets.items()}

    @property
    def total(self) -> int:
        return sum(len(members) for members in self.buckets.values())

    def to_json_dict(self, ids: Sequence[str]) -> dict:
        """JSON payload mapping bucket keys to member sample ids."""
        return {
            "prefix_bits": self.prefix_bits,
            "buckets": {
                key: [ids[i] for i in members]
                for key, members in sorted(self.buckets.items())
            },
        }

    def save_json(self, path: str | Path, ids: Sequence[str]) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(ids), indent=2))


class SimHashStratifier(BaseEstimator):
    """Random-hyperplane hasher producing bit signatures and strata.

    Parameters:
        n_bits: Signature length h (number of hyperplanes), 1..256.
        prefix_bits: Bucket key length b <= h; bucket count is at most 2**b.
        seed: Seed for the hyperplane generator. The planes are a pure
            function of (n_features, n_bits, seed), so a stratifier is
            reconstructible bit-exactly from its parameters.

    Inputs are expected to be standardized; unscaled features would let
    large-magnitude features dominate every hyperplane.
    """

    def __init__(self, n_bits: int = 64, prefix_bits: int = 12, seed: int = 0):
        self.n_bits = n_bits
        self.prefix_bits = prefix_bits
        self.seed = seed
        self.planes_: np.ndarray | None = None

    def _check_params(self):
        if not 1 <= self.n_bits <= MAX_BITS:
            raise ValueError(f"n_bits must be in 1..{MAX_BITS}, got {self.n_bits}")
        if not 1 <= self.prefix_bits <= self.n_bits:
            raise ValueError(
                f"prefix_bits must be in 1..{self.n_bits}, got {self.prefix_bits}"
            )

    def fit(self, X, y=None) -> "SimHashStratifier":
        """Draw the hyperplane bank for X's dimensionality."""
        X = check_matrix(X, "X")
        return self.fit_dim(X.shape[1])

    def fit_dim(self, n_features: int) -> "SimHashStratifier":
        self._check_params()
        if n_features < 1:
            raise ValueError(f"n_features must be >= 1, got {n_features}")
        rng = np.random.default_rng(self.seed)
        self.planes_ = rng.standard_normal((self.n_bits, n_features))
        return self

    def transform(self, X) -> np.ndarray:
        """Signatures as a boolean (n_samples, n_bits) array.

        Bit i is planes[i] . x >= 0; the tie sign(0) -> 1 makes signatures
        total functions.
        """
        check_fitted(self, "planes_")
        X = check_matrix(X, "X", n_features=self.planes_.shape[1])
        return X @ self.planes_.T >= 0.0

    def bucket_keys(self, X) -> list[str]:
        """Bucket key per sample: the first prefix_bits signature bits."""
        sig = self.transform(X)[:, : self.prefix_bits]
        digits = sig.astype(np.uint8) + ord("0")
        return [bytes(row).decode("ascii") for row in digits]

    def stratify(self, X) -> StratumTable:
        """Group row indices of X into buckets in one pass."""
        keys = self.bucket_keys(X)
        grouped: dict[str, list[int]] = {}
        for i, key in enumerate(keys):
            grouped.setdefault(key, []).append(i)
        buckets = {
            key: np.array(members, dtype=np.intp)
            for key, members in sorted(grouped.items())
        }
        return StratumTable(prefix_bits=self.prefix_bits, buckets=buckets)


def signature_string(bits: np.ndarray) -> str:
    """Render one boolean signature row as a '0'/'1' string."""
    return bytes(bits.astype(np.uint8) + ord("0")).decode("ascii")
