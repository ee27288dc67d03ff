"""Threshold calibration: sweep, contamination estimation, selection, confirm.

Each gate is swept independently over a quantile grid on held-out
validation candidates; the chosen thresholds are then confirmed under the
full voting policy on a disjoint test split.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .data import Dataset, Label
from .gates import MahalanobisGate, _GateBase
from .harvest import VotingPolicy
from .probe import LogisticProbe
from .synth import TruthSidecar


class SplitError(ValueError):
    """Split specification or outcome is unusable."""


class ProtocolError(RuntimeError):
    """Calibration protocol violated (overlapping or empty splits)."""


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic label-stratified split into fit/validation/test."""

    validation_fraction: float
    test_fraction: float
    seed: int

    def __post_init__(self):
        if self.validation_fraction <= 0 or self.test_fraction <= 0:
            raise SplitError("split fractions must be positive")
        if self.validation_fraction + self.test_fraction >= 1.0:
            raise SplitError(
                f"split fractions sum to "
                f"{self.validation_fraction + self.test_fraction}, must be < 1"
            )


@dataclass(frozen=True)
class Splits:
    fit: frozenset[str]
    validation: frozenset[str]
    test: frozenset[str]


def split_dataset(
    data: Dataset,
    spec: SplitSpec,
    required_labels: Sequence[Label] = (),
) -> Splits:
    """Shuffle each label group with the split seed and cut it by fractions.

    Raises SplitError when a required label ends up with an empty part.
    """
    rng = np.random.default_rng(spec.seed)
    fit: list[str] = []
    validation: list[str] = []
    test: list[str] = []
    for label in Label:
        idx = data.indices_with_labels([label])
        if idx.size == 0:
            continue
        order = rng.permutation(idx.size)
        shuffled = [data.ids[idx[j]] for j in order]
        n = len(shuffled)
        n_test = int(round(spec.test_fraction * n))
        n_val = int(round(spec.validation_fraction * n))
        test.extend(shuffled[:n_test])
        validation.extend(shuffled[n_test : n_test + n_val])
        fit.extend(shuffled[n_test + n_val :])
    splits = Splits(
        fit=frozenset(fit),
        validation=frozenset(validation),
        test=frozenset(test),
    )
    for label in required_labels:
        for part_name, part in (
            ("fit", splits.fit),
            ("validation", splits.validation),
            ("test", splits.test),
        ):
            idx = data.indices_with_labels([label])
            if not any(data.ids[i] in part for i in idx):
                raise SplitError(
                    f"label {label.value!r} has no samples in the {part_name} split"
                )
    return splits


@dataclass(frozen=True)
class ContaminationEstimate:
    rate: float
    empty: bool = False


class ContaminationEstimator(Protocol):
    """Estimates the fraud fraction of an accepted candidate set."""

    method: str

    def estimate(
        self, ids: Sequence[str], X: np.ndarray
    ) -> ContaminationEstimate: ...


class TrueLabelEstimator:
    """Exact contamination from the synthetic ground-truth sidecar."""

    method = "true-label"

    def __init__(self, sidecar: TruthSidecar):
        self.sidecar = sidecar

    def estimate(self, ids, X) -> ContaminationEstimate:
        if len(ids) == 0:
            return ContaminationEstimate(rate=0.0, empty=True)
        hits = sum(1 for sid in ids if self.sidecar.lookup(sid) is Label.FRAUD)
        return ContaminationEstimate(rate=hits / len(ids))


class DistanceProbeEstimator:
    """Flags accepted samples whose Mahalanobis score falls inside a probe
    radius taken as a quantile of the in-fraud score distribution."""

    method = "distance-probe"

    def __init__(
        self,
        gate: MahalanobisGate,
        fraud_X: np.ndarray,
        radius_quantile: float = 0.99,
    ):
        self.gate = gate
        self.radius = float(
            np.quantile(gate.score_samples(fraud_X), radius_quantile)
        )

    def estimate(self, ids, X) -> ContaminationEstimate:
        if len(ids) == 0:
            return ContaminationEstimate(rate=0.0, empty=True)
        scores = self.gate.score_samples(X)
        return ContaminationEstimate(rate=float(np.mean(scores < self.radius)))


class RegressionProbeEstimator:
    """Logistic probe on labeled fraud (1) vs labeled nonfraud (0); an
    accepted sample counts as contamination when its probability exceeds 0.5."""

    method = "regression-probe"

    def __init__(self, fraud_X: np.ndarray, nonfraud_X: np.ndarray):
        X = np.vstack([fraud_X, nonfraud_X])
        y = np.concatenate(
            [np.ones(fraud_X.shape[0]), np.zeros(nonfraud_X.shape[0])]
        )
        self.probe = LogisticProbe().fit(X, y)

    def estimate(self, ids, X) -> ContaminationEstimate:
        if len(ids) == 0:
            return ContaminationEstimate(rate=0.0, empty=True)
        return ContaminationEstimate(
            rate=float(np.mean(self.probe.predict_proba(X) > 0.5))
        )


@dataclass(frozen=True)
class SweepRow:
    quantile: float
    tau: float
    contamination: float
    contamination_empty: bool
    yield_count: int


DEFAULT_GRID = tuple(np.round(np.linspace(0.05, 0.95, 19), 10))


def sweep_thresholds(
    gate: _GateBase,
    candidate_ids: Sequence[str],
    X: np.ndarray,
    estimator: ContaminationEstimator,
    grid: Sequence[float] = DEFAULT_GRID,
) -> list[SweepRow]:
    """Evaluate candidate thresholds at each score quantile in *grid*.

    tau(q) is the q-quantile of the gate's scores over the validation
    candidates; contamination and yield describe the accept set
    {score >= tau(q)}.
    """
    if len(candidate_ids) == 0:
        raise ProtocolError("threshold sweep needs a non-empty validation set")
    grid = list(grid)
    if any(not 0.0 <= q < 1.0 for q in grid):
        raise ValueError("grid quantiles must lie in [0, 1)")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    scores = gate.score_samples(X)
    ids_arr = np.asarray(candidate_ids, dtype=object)
    rows = []
    for q in grid:
        tau = float(np.quantile(scores, q))
        mask = scores >= tau
        est = estimator.estimate(list(ids_arr[mask]), X[mask])
        rows.append(
            SweepRow(
                quantile=float(q),
                tau=tau,
                contamination=est.rate,
                contamination_empty=est.empty,
                yield_count=int(mask.sum()),
            )
        )
    return rows


@dataclass(frozen=True)
class ChosenThreshold:
    quantile: float
    tau: float
    contamination: float
    yield_count: int
    constraint_met: bool


def select_thresholds(
    reports: dict[str, list[SweepRow]], max_contamination: float
) -> dict[str, ChosenThreshold]:
    """Per gate: the smallest tau (largest yield) meeting the constraint.

    If no row qualifies, fall back to the minimum-contamination row (ties
    break toward the smaller tau) and flag the constraint as unmet.
    """
    chosen: dict[str, ChosenThreshold] = {}
    for name, rows in reports.items():
        if not rows:
            raise ValueError(f"gate {name!r} has an empty sweep report")
        ok = [r for r in rows if r.contamination <= max_contamination]
        if ok:
            best = min(ok, key=lambda r: r.tau)
            met = True
        else:
            best = min(rows, key=lambda r: (r.contamination, r.tau))
            met = False
        chosen[name] = ChosenThreshold(
            quantile=best.quantile,
            tau=best.tau,
            contamination=best.contamination,
            yield_count=best.yield_count,
            constraint_met=met,
        )
    return chosen


@dataclass(frozen=True)
class TestConfirmation:
    contamination: float
    contamination_empty: bool
    yield_count: int
    scanned: int
    passed: bool


def confirm_on_test(
    gates: Sequence[_GateBase],
    policy: VotingPolicy,
    test_ids: Sequence[str],
    X_test: np.ndarray,
    estimator: ContaminationEstimator,
    max_contamination: float,
    validation_ids: Sequence[str] = (),
) -> TestConfirmation:
    """Run the full voting ensemble on the test candidates.

    Disjointness from validation is asserted, never assumed.
    """
    overlap = set(test_ids) & set(validation_ids)
    if overlap:
        raise ProtocolError(
            f"validation/test splits overlap on {len(overlap)} ids"
        )
    if len(test_ids) == 0:
        raise ProtocolError("test confirmation needs a non-empty candidate set")
    votes = np.zeros(len(test_ids), dtype=np.int64)
    for gate in gates:
        passes, _ = gate.decide(X_test)
        votes += passes.astype(np.int64)
    accepted = votes >= policy.required_votes
    ids_arr = np.asarray(test_ids, dtype=object)
    est = estimator.estimate(list(ids_arr[accepted]), X_test[accepted])
    return TestConfirmation(
        contamination=est.rate,
        contamination_empty=est.empty,
        yield_count=int(accepted.sum()),
        scanned=len(test_ids),
        passed=est.rate <= max_contamination,
    )


@dataclass
class CalibrationReport:
    """Everything the threshold selection saw and decided."""

    estimator_method: str
    max_contamination: float
    sweeps: dict[str, list[SweepRow]]
    chosen: dict[str, ChosenThreshold]
    test: TestConfirmation | None = None

    def to_json_dict(self) -> dict:
        payload = {
            "estimator": self.estimator_method,
            "max_contamination": self.max_contamination,
            "sweeps": {
                name: [vars(r) for r in rows]
                for name, rows in sorted(self.sweeps.items())
            },
            "chosen": {
                name: vars(c) for name, c in sorted(self.chosen.items())
            },
        }
        payload["test"] = vars(self.test) if self.test else None
        return payload

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))

    def save_csv(self, path: str | Path) -> None:
        """Flat sweep table for plotting: gate, q, tau, contamination, yield."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["gate", "quantile", "tau", "contamination", "yield"])
            for name in sorted(self.sweeps):
                for r in self.sweeps[name]:
                    writer.writerow(
                        [name, r.quantile, repr(r.tau), repr(r.contamination),
                         r.yield_count]
                    )
