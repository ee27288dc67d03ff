"""Dataset model and CSV I/O.

A dataset is a dense feature matrix with one row per sample, a unique string
id per row, and a 4-way label: fraud / suspicious / nonfraud / unlabeled.
CSV is the only on-disk format; reals are written with full precision so a
save/load round trip is bit-exact.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class Label(enum.Enum):
    FRAUD = "fraud"
    SUSPICIOUS = "suspicious"
    NONFRAUD = "nonfraud"
    UNLABELED = "unlabeled"


LABELED = (Label.FRAUD, Label.SUSPICIOUS, Label.NONFRAUD)


class DataError(ValueError):
    """Malformed dataset file or dataset invariant violation."""


@dataclass
class Dataset:
    """In-memory dataset: ids, feature matrix, labels.

    Invariants: ids are unique, features has shape (len(ids), dim), every
    entry is finite. Instances are treated as immutable after construction.
    """

    dim: int
    ids: list[str]
    features: np.ndarray
    labels: list[Label]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.features.shape != (len(self.ids), self.dim):
            raise DataError(
                f"feature matrix shape {self.features.shape} does not match "
                f"{len(self.ids)} samples x dim {self.dim}"
            )
        if len(self.labels) != len(self.ids):
            raise DataError("labels and ids length mismatch")
        if not np.isfinite(self.features).all():
            raise DataError("features contain non-finite values")
        self._index = {}
        for i, sid in enumerate(self.ids):
            if sid in self._index:
                raise DataError(f"duplicate id {sid!r}")
            self._index[sid] = i

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, sample_id: str) -> int:
        try:
            return self._index[sample_id]
        except KeyError:
            raise KeyError(f"unknown sample id {sample_id!r}") from None

    def indices_with_labels(self, labels: Iterable[Label]) -> np.ndarray:
        """Row indices whose label is in *labels*, in dataset order."""
        wanted = set(labels)
        return np.array(
            [i for i, lab in enumerate(self.labels) if lab in wanted],
            dtype=np.intp,
        )

    def take(self, indices: Sequence[int]) -> "Dataset":
        """New Dataset restricted to *indices*, preserving their order."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            dim=self.dim,
            ids=[self.ids[i] for i in idx],
            features=self.features[idx].copy(),
            labels=[self.labels[i] for i in idx],
        )


def _format_real(value: float) -> str:
    # repr of a Python float round-trips exactly through float()
    return repr(float(value))


def expected_header(dim: int) -> list[str]:
    return ["id", "label"] + [f"f{j}" for j in range(dim)]


def load_dataset(path: str | Path, dim: int) -> Dataset:
    """Load a dataset CSV with header ``id,label,f0,...,f{dim-1}``.

    Raises:
        DataError: naming the offending line for a wrong column count,
            non-finite or unparsable value, duplicate id, or unknown label.
    """
    path = Path(path)
    if dim < 1:
        raise DataError(f"dim must be >= 1, got {dim}")
    header = expected_header(dim)
    ids: list[str] = []
    labels: list[Label] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got_header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header row") from None
        if got_header != header:
            raise DataError(
                f"{path}: line 1: bad header {got_header!r}, expected {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise DataError(
                    f"{path}: line {lineno}: expected {dim + 2} columns, "
                    f"got {len(row)}"
                )
            sid, raw_label = row[0], row[1]
            if sid in seen:
                raise DataError(f"{path}: line {lineno}: duplicate id {sid!r}")
            seen.add(sid)
            try:
                label = Label(raw_label)
            except ValueError:
                raise DataError(
                    f"{path}: line {lineno}: unknown label {raw_label!r}"
                ) from None
            try:
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if not all(np.isfinite(values)):
                raise DataError(
                    f"{path}: line {lineno}: non-finite feature value"
                )
            ids.append(sid)
            labels.append(label)
            rows.append(values)
    features = (
        np.array(rows, dtype=np.float64)
        if rows
        else np.empty((0, dim), dtype=np.float64)
    )
    return Dataset(dim=dim, ids=ids, features=features, labels=labels)


def save_dataset(data: Dataset, path: str | Path) -> None:
    """Write *data* as CSV; reals carry full precision for exact round trips."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(expected_header(data.dim))
        for sid, label, row in zip(data.ids, data.labels, data.features):
            writer.writerow([sid, label.value] + [_format_real(v) for v in row])
