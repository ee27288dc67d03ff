"""Ablation harness: sampler/gate combinations scored by a linear probe.

Arms share one dataset, one split, one standardizer, and one per-gate
threshold calibration, so differences in the results reflect only what an
arm changes: how candidates are sampled and which gates filter them.
Contamination comparisons run at matched yield (the random baseline's
budget is set to the reference arm's realized yield).
"""

from __future__ import annotations

import csv
import json
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import TrueLabelEstimator
from .data import Dataset, Label
from .gates import _GateBase
from .harvest import (
    HarvestRecord,
    VotingPolicy,
    export_training_set,
    harvest,
    load_training_set,
)
from .pipeline import (
    PipelineConfig,
    PipelineState,
    prepare,
    stage_calibrate,
    stage_fit_gates,
)
from .probe import LogisticProbe
from .sampling import allocate, draw
from .simhash import SimHashStratifier, StratumTable
from .synth import TruthSidecar


class AblationError(ValueError):
    """Arm specification problem."""


# ---------------------------------------------------------------------------
# Precision-recall machinery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    no_positives: bool = False  # precision reported as 1 by convention


def pr_curve(
    scores: np.ndarray,
    truth: np.ndarray,
    thresholds: Sequence[float] | None = None,
) -> list[PRPoint]:
    """Precision/recall of {score >= t} against binary truth, per threshold.

    With no predicted positives, precision is reported as 1 and flagged.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    if scores.size == 0:
        raise AblationError("pr_curve needs a non-empty evaluation set")
    if thresholds is None:
        thresholds = np.linspace(0.0, 1.0, 101)
    positives = int(truth.sum())
    points = []
    for t in thresholds:
        predicted = scores >= t
        tp = int((predicted & truth).sum())
        n_pred = int(predicted.sum())
        no_pos = n_pred == 0
        precision = 1.0 if no_pos else tp / n_pred
        recall = 0.0 if positives == 0 else tp / positives
        points.append(
            PRPoint(
                threshold=float(t),
                precision=precision,
                recall=recall,
                no_positives=no_pos,
            )
        )
    return points


def auprc(points: Sequence[PRPoint]) -> float:
    """Step integral of precision over recall, thresholds descending."""
    ordered = sorted(points, key=lambda p: -p.threshold)
    area = 0.0
    prev_recall = 0.0
    for p in ordered:
        area += (p.recall - prev_recall) * p.precision
        prev_recall = p.recall
    return area


def save_pr_csv(points: Sequence[PRPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall"])
        for p in points:
            writer.writerow([repr(p.threshold), repr(p.precision), repr(p.recall)])


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BucketCoverage:
    key: str
    population: int
    sampled: int

    @property
    def ratio(self) -> float:
        return self.sampled / self.population


@dataclass(frozen=True)
class CoverageReport:
    floor: int
    buckets: list[BucketCoverage]

    @property
    def floor_fraction(self) -> float:
        """Fraction of nonempty buckets with sampled >= min(floor, pop)."""
        if not self.buckets:
            return 0.0
        met = sum(
            1
            for b in self.buckets
            if b.sampled >= min(self.floor, b.population)
        )
        return met / len(self.buckets)


def coverage_report(
    table: StratumTable,
    stratified_ids: Sequence[str],
    sampled_ids: Sequence[str],
    floor: int,
) -> CoverageReport:
    """Per-bucket population vs sampled counts over one stratum table."""
    index_of = {sid: i for i, sid in enumerate(stratified_ids)}
    bucket_of: dict[int, str] = {}
    for key, members in table.buckets.items():
        for i in members:
            bucket_of[int(i)] = key
    sampled_per_bucket: dict[str, int] = {key: 0 for key in table.buckets}
    for sid in sampled_ids:
        if sid not in index_of:
            raise AblationError(f"sampled id {sid!r} is not in the stratified set")
        sampled_per_bucket[bucket_of[index_of[sid]]] += 1
    buckets = [
        BucketCoverage(
            key=key,
            population=len(table.buckets[key]),
            sampled=sampled_per_bucket[key],
        )
        for key in sorted(table.buckets)
    ]
    return CoverageReport(floor=floor, buckets=buckets)


# ---------------------------------------------------------------------------
# Arms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationArm:
    """One sampler/gates/policy combination.

    sampler is "random" or "simhash"; floor only applies to simhash arms.
    required_votes defaults to unanimity over the arm's gates. An arm with
    no gates accepts every candidate at weight 1.0 (the undersampling
    baseline). match_yield makes a random arm's budget track the reference
    arm's realized yield.
    """

    name: str
    sampler: str
    gates: tuple[str, ...] = ()
    floor: int = 0
    required_votes: int | None = None
    match_yield: bool = False

    def __post_init__(self):
        if self.sampler not in ("random", "simhash"):
            raise AblationError(f"unknown sampler {self.sampler!r}")
        if self.required_votes is not None and not self.gates:
            raise AblationError(f"arm {self.name!r} sets votes without gates")
        if self.match_yield and self.sampler != "random":
            raise AblationError("match_yield only applies to random arms")

    @property
    def policy(self) -> VotingPolicy | None:
        if not self.gates:
            return None
        k = self.required_votes or len(self.gates)
        return VotingPolicy(required_votes=k, total_gates=len(self.gates))


DEFAULT_ARMS = (
    AblationArm(name="full_pipeline", sampler="simhash",
                gates=("mahalanobis", "knn_density")),
    AblationArm(name="random_baseline", sampler="random", match_yield=True),
    AblationArm(name="simhash_only", sampler="simhash"),
    AblationArm(name="mahalanobis_only", sampler="random",
                gates=("mahalanobis",)),
    AblationArm(name="knn_only", sampler="random", gates=("knn_density",)),
    AblationArm(name="dual_unanimous", sampler="random",
                gates=("mahalanobis", "knn_density")),
)


@dataclass
class ArmResult:
    name: str
    candidate_count: int
    yield_count: int
    contamination: float
    coverage_floor_fraction: float
    auprc: float
    pr_points: list[PRPoint]
    fpr_by_cohort: dict[str, float]
    records: list[HarvestRecord] = field(repr=False, default_factory=list)
    accepted_ids: frozenset[str] = frozenset()
    per_gate_accepted: dict[str, frozenset[str]] = field(default_factory=dict)


def _random_candidates(
    ids: Sequence[str], budget: int, seed: int
) -> list[str]:
    rng = np.random.default_rng([seed, budget])
    budget = min(budget, len(ids))
    chosen = rng.choice(len(ids), size=budget, replace=False)
    return sorted(ids[i] for i in chosen)


def _accept_all(candidates: Sequence[str]) -> list[HarvestRecord]:
    return [
        HarvestRecord(
            sample_id=sid, scores={}, margins={}, votes=0, accepted=True,
            weight=1.0,
        )
        for sid in sorted(candidates)
    ]


def run_ablation(
    config: PipelineConfig,
    arms: Sequence[AblationArm] = DEFAULT_ARMS,
    out_dir: str | Path | None = None,
) -> dict[str, ArmResult]:
    """Run every arm end to end and score its training set with the probe.

    The reference arm for yield matching is "full_pipeline" when present
    (first arm otherwise); it always runs first. Writes results.csv and one
    pr_<arm>.csv per arm when out_dir is given.
    """
    if config.truth_path is None:
        raise AblationError("ablation needs a ground-truth sidecar")
    names = [arm.name for arm in arms]
    if len(set(names)) != len(names):
        raise AblationError("arm names must be unique")

    state = prepare(config)
    sidecar = state.sidecar
    estimator = TrueLabelEstimator(sidecar)

    # Shared machinery: gates fitted on fit-split fraud and calibrated once,
    # so identical gates carry identical thresholds across arms.
    all_gates = stage_fit_gates(state)
    stage_calibrate(state, all_gates)
    gate_by_name = {g.name: g for g in all_gates}

    fit_unlabeled = sorted(
        sid
        for sid in state.splits.fit
        if state.data.labels[state.data.row(sid)] is Label.UNLABELED
    )
    X_unlabeled = state.standardized(fit_unlabeled)
    stratifier = SimHashStratifier(
        n_bits=config.simhash_bits,
        prefix_bits=config.simhash_prefix_bits,
        seed=config.simhash_seed,
    ).fit(X_unlabeled)
    table = stratifier.stratify(X_unlabeled)

    # Probe evaluation set: the held-out test split, truth from the sidecar.
    test_ids = sorted(state.splits.test)
    test_rows = state.rows_for(test_ids)
    X_test_raw = state.data.features[test_rows]
    truth01 = np.array(
        [sidecar.lookup(sid) is Label.FRAUD for sid in test_ids], dtype=bool
    )
    cohorts = np.array([sidecar.cohort.get(sid, "") for sid in test_ids])

    ordered = sorted(arms, key=lambda a: a.match_yield)  # references first
    reference_name = (
        "full_pipeline" if "full_pipeline" in names else ordered[0].name
    )
    results: dict[str, ArmResult] = {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        work_dir = out
        tmp = None
    else:
        tmp = tempfile.TemporaryDirectory()
        work_dir = Path(tmp.name)

    for arm in ordered:
        if arm.match_yield:
            if reference_name not in results:
                raise AblationError(
                    f"arm {arm.name!r} matches yield but reference "
                    f"{reference_name!r} has not run"
                )
            budget = max(1, results[reference_name].yield_count)
        else:
            budget = config.sampler_budget

        if arm.sampler == "simhash":
            plan = allocate(table, budget, arm.floor)
            candidates = draw(plan, table, fit_unlabeled, config.sampler_seed)
        else:
            candidates = _random_candidates(
                fit_unlabeled, budget, config.sampler_seed
            )

        if arm.gates:
            gates = [gate_by_name[name] for name in arm.gates]
            X_cand = state.standardized(candidates)
            records, _ = harvest(candidates, X_cand, gates, arm.policy)
            per_gate_accepted = {
                g.name: frozenset(
                    r.sample_id for r in records if r.margins[g.name] >= 0.0
                )
                for g in gates
            }
            accepted_ids = frozenset(
                r.sample_id for r in records if r.accepted
            )
            if arm.policy.required_votes == len(gates) and len(gates) > 1:
                intersection = frozenset.intersection(*per_gate_accepted.values())
                assert accepted_ids == intersection, (
                    "unanimous accept set must equal the per-gate intersection"
                )
        else:
            records = _accept_all(candidates)
            per_gate_accepted = {}
            accepted_ids = frozenset(candidates)

        est = estimator.estimate(
            sorted(accepted_ids), np.empty((len(accepted_ids), 0))
        )
        training_source = state.data.take(state.rows_for(sorted(state.splits.fit)))
        training_path = work_dir / f"training_{arm.name}.csv"
        export_training_set(records, training_source, training_path)
        probe = train_probe(training_path, config.dim)
        scores = probe.predict_proba(X_test_raw)
        points = pr_curve(scores, truth01)
        fpr = _fpr_by_cohort(scores, truth01, cohorts)
        cov = coverage_report(table, fit_unlabeled, candidates, arm.floor)
        results[arm.name] = ArmResult(
            name=arm.name,
            candidate_count=len(candidates),
            yield_count=len(accepted_ids),
            contamination=est.rate,
            coverage_floor_fraction=cov.floor_fraction,
            auprc=auprc(points),
            pr_points=points,
            fpr_by_cohort=fpr,
            records=records,
            accepted_ids=accepted_ids,
            per_gate_accepted=per_gate_accepted,
        )
        if out is not None:
            save_pr_csv(points, out / f"pr_{arm.name}.csv")

    if out is not None:
        _save_results_csv(results, [a.name for a in arms], out / "results.csv")
        _save_fpr_json(results, out / "cohort_fpr.json")
    if tmp is not None:
        tmp.cleanup()
    return results


def train_probe(training_csv: str | Path, dim: int) -> LogisticProbe:
    """Fit the linear probe on a weighted training CSV (fraud=1, nonfraud=0).

    Suspicious rows are excluded: the probe measures fraud-vs-legitimate
    separation and uncertain labels would blur it.
    """
    ids, labels, weights, X = load_training_set(training_csv, dim)
    keep = [i for i, lab in enumerate(labels) if lab is not Label.SUSPICIOUS]
    if not keep:
        raise AblationError("training set has no fraud/nonfraud rows")
    y = np.array(
        [1.0 if labels[i] is Label.FRAUD else 0.0 for i in keep]
    )
    return LogisticProbe().fit(X[keep], y, sample_weight=weights[keep])


def _fpr_by_cohort(
    scores: np.ndarray, truth01: np.ndarray, cohorts: np.ndarray
) -> dict[str, float]:
    """False-positive rate (probe p > 0.5) among truth-negative rows, per cohort."""
    flagged = scores > 0.5
    result: dict[str, float] = {}
    for cohort in sorted(set(cohorts)):
        mask = (cohorts == cohort) & ~truth01
        if mask.sum() == 0:
            continue
        result[cohort] = float(flagged[mask].mean())
    return result


def _save_results_csv(
    results: dict[str, ArmResult], order: Sequence[str], path: Path
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["arm", "contamination", "yield", "coverage_floor_fraction", "auprc"]
        )
        for name in order:
            r = results[name]
            writer.writerow(
                [r.name, repr(r.contamination), r.yield_count,
                 repr(r.coverage_floor_fraction), repr(r.auprc)]
            )


def _save_fpr_json(results: dict[str, ArmResult], path: Path) -> None:
    payload = {name: r.fpr_by_cohort for name, r in sorted(results.items())}
    path.write_text(json.dumps(payload, indent=2))
