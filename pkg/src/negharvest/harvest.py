"""Gate voting, confidence weighting, and the harvested training set.

Candidates are scored by every gate regardless of the outcome (the audit
trail is worth the throughput), accepted under a k-of-n policy, and the
accepted ones are weighted by how far past the thresholds they landed.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .data import Dataset, Label, LABELED
from .gates import GateError, _GateBase


class HarvestError(ValueError):
    """Harvest inputs violate a contract."""


@dataclass(frozen=True)
class VotingPolicy:
    """Accept a sample when at least required_votes of total_gates pass."""

    required_votes: int
    total_gates: int

    def __post_init__(self):
        if not 1 <= self.required_votes <= self.total_gates:
            raise HarvestError(
                f"policy needs 1 <= k <= n, got k={self.required_votes} "
                f"n={self.total_gates}"
            )


@dataclass(frozen=True)
class HarvestRecord:
    """Audit record for one scanned candidate."""

    sample_id: str
    scores: dict[str, float]
    margins: dict[str, float]
    votes: int
    accepted: bool
    weight: float | None  # in (0, 1]; present only when accepted


@dataclass
class HarvestManifest:
    """Summary of one harvest run."""

    gate_thresholds: dict[str, float]
    policy: VotingPolicy
    scanned: int
    accepted: int
    config_digest: str | None = None
    training_csv: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "gate_thresholds": self.gate_thresholds,
            "policy": {
                "required_votes": self.policy.required_votes,
                "total_gates": self.policy.total_gates,
            },
            "scanned": self.scanned,
            "accepted": self.accepted,
            "training_csv": self.training_csv,
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))


def vote(passes: Sequence[bool], policy: VotingPolicy) -> bool:
    """True iff enough gates passed."""
    if len(passes) != policy.total_gates:
        raise HarvestError(
            f"{len(passes)} votes for a {policy.total_gates}-gate policy"
        )
    return int(sum(bool(p) for p in passes)) >= policy.required_votes


def confidence_weight(margins: Sequence[float], accepted: bool) -> float:
    """Mean logistic of the normalized margins; strictly increasing in each.

    Margins at threshold give 0.5; the weight approaches 1 as every margin
    grows. Only defined for accepted samples.
    """
    if not accepted:
        raise HarvestError("confidence_weight is only defined for accepted samples")
    if len(margins) == 0:
        raise HarvestError("confidence_weight needs at least one margin")
    return float(np.mean(expit(np.asarray(margins, dtype=np.float64))))


def _score_in_blocks(gate: _GateBase, X: np.ndarray, threads: int) -> np.ndarray:
    if threads <= 1 or X.shape[0] < 2 * threads:
        return gate.score_samples(X)
    blocks = np.array_split(np.arange(X.shape[0]), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda idx: gate.score_samples(X[idx]), blocks))
    return np.concatenate(parts)


def harvest(
    candidate_ids: Sequence[str],
    X: np.ndarray,
    gates: Sequence[_GateBase],
    policy: VotingPolicy,
    threads: int = 1,
) -> tuple[list[HarvestRecord], HarvestManifest]:
    """Score candidates with every gate and apply the voting policy.

    X must hold standardized candidate vectors aligned with candidate_ids.
    Returns one record per candidate, ordered by id, plus a manifest. The
    per-block scoring may run on a thread pool; results are merged in input
    order so the output is identical at any thread count.
    """
    if len(candidate_ids) != X.shape[0]:
        raise HarvestError("candidate ids and vectors are misaligned")
    if len(gates) != policy.total_gates:
        raise HarvestError(
            f"{len(gates)} gates but policy expects {policy.total_gates}"
        )
    for gate in gates:
        if gate.threshold_ is None:
            raise GateError(f"gate {gate.name!r} has no calibrated threshold")

    per_gate_scores = {}
    per_gate_margins = {}
    per_gate_pass = {}
    for gate in gates:
        scores = _score_in_blocks(gate, X, threads)
        per_gate_scores[gate.name] = scores
        per_gate_margins[gate.name] = (scores - gate.threshold_) / gate.margin_scale_
        per_gate_pass[gate.name] = scores >= gate.threshold_

    order = np.argsort(np.asarray(candidate_ids, dtype=object))
    records: list[HarvestRecord] = []
    accepted_count = 0
    for i in order:
        passes = [bool(per_gate_pass[g.name][i]) for g in gates]
        margins = {g.name: float(per_gate_margins[g.name][i]) for g in gates}
        votes = int(sum(passes))
        accepted = votes >= policy.required_votes
        weight = (
            confidence_weight(list(margins.values()), accepted)
            if accepted
            else None
        )
        accepted_count += int(accepted)
        records.append(
            HarvestRecord(
                sample_id=candidate_ids[i],
                scores={g.name: float(per_gate_scores[g.name][i]) for g in gates},
                margins=margins,
                votes=votes,
                accepted=accepted,
                weight=weight,
            )
        )
    manifest = HarvestManifest(
        gate_thresholds={g.name: float(g.threshold_) for g in gates},
        policy=policy,
        scanned=len(records),
        accepted=accepted_count,
    )
    return records, manifest


def export_training_set(
    records: Sequence[HarvestRecord],
    source: Dataset,
    path: str | Path,
) -> int:
    """Write the weighted training CSV: labeled rows plus harvested negatives.

    Labeled rows (fraud/suspicious/nonfraud) keep their label with weight
    1.0; accepted harvest records are appended as nonfraud with their
    confidence weight. Returns the number of rows written.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labeled_idx = source.indices_with_labels(LABELED)
    labeled_ids = {source.ids[i] for i in labeled_idx}
    rows_written = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["id", "label", "weight"] + [f"f{j}" for j in range(source.dim)]
        )
        for i in labeled_idx:
            writer.writerow(
                [source.ids[i], source.labels[i].value, "1.0"]
                + [repr(float(v)) for v in source.features[i]]
            )
            rows_written += 1
        for record in records:
            if not record.accepted:
                continue
            if record.sample_id in labeled_ids:
                raise HarvestError(
                    f"harvested id {record.sample_id!r} collides with a labeled row"
                )
            i = source.row(record.sample_id)
            writer.writerow(
                [record.sample_id, Label.NONFRAUD.value, repr(float(record.weight))]
                + [repr(float(v)) for v in source.features[i]]
            )
            rows_written += 1
    return rows_written


def load_training_set(path: str | Path, dim: int):
    """Read a training CSV back: (ids, labels, weights, X)."""
    ids: list[str] = []
    labels: list[Label] = []
    weights: list[float] = []
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["id", "label", "weight"] + [f"f{j}" for j in range(dim)]
        if header != expected:
            raise HarvestError(f"{path}: bad training header {header!r}")
        for row in reader:
            ids.append(row[0])
            labels.append(Label(row[1]))
            weights.append(float(row[2]))
            rows.append([float(v) for v in row[3:]])
    X = (
        np.array(rows, dtype=np.float64)
        if rows
        else np.empty((0, dim), dtype=np.float64)
    )
    return ids, labels, np.array(weights, dtype=np.float64), X
