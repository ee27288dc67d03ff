"""End-to-end pipeline: config, stage sequence, artifacts, manifests.

Every run is reconstructible from its manifest: all randomness flows from
explicit config seeds, artifact paths are recorded relative to the output
directory, and each artifact rides with the config digest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import (
    CalibrationReport,
    DistanceProbeEstimator,
    ProtocolError,
    RegressionProbeEstimator,
    SplitSpec,
    Splits,
    TestConfirmation,
    TrueLabelEstimator,
    confirm_on_test,
    select_thresholds,
    split_dataset,
    sweep_thresholds,
    DEFAULT_GRID,
)
from .data import Dataset, Label, load_dataset
from .gates import GATE_TYPES, KnnDensityGate, MahalanobisGate, _GateBase
from .harvest import (
    HarvestManifest,
    HarvestRecord,
    VotingPolicy,
    export_training_set,
    harvest,
)
from .preprocessing import Standardizer, fit_standardizer
from .sampling import AllocationPlan, allocate, draw
from .simhash import SimHashStratifier, StratumTable
from .synth import TruthSidecar


class ConfigError(ValueError):
    """Pipeline configuration is invalid."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


ESTIMATOR_METHODS = ("true-label", "distance-probe", "regression-probe")


@dataclass(frozen=True)
class PipelineConfig:
    """Validated pipeline configuration (see README for the JSON schema)."""

    dataset_path: str
    truth_path: str | None
    dim: int
    simhash_bits: int
    simhash_prefix_bits: int
    simhash_seed: int
    sampler_budget: int
    sampler_floor: int
    sampler_seed: int
    gate_names: tuple[str, ...]
    knn_k: int
    required_votes: int
    grid: tuple[float, ...]
    max_contamination: float
    validation_fraction: float
    test_fraction: float
    split_seed: int
    estimator: str
    probe_radius_quantile: float
    output_dir: str | None

    @classmethod
    def from_json_dict(cls, payload: dict) -> "PipelineConfig":
        try:
            dataset = payload["dataset"]
            simhash = payload.get("simhash", {})
            sampler = payload["sampler"]
            gates = payload.get("gates", {})
            policy = payload.get("policy", {})
            cal = payload.get("calibration", {})
            gate_names = tuple(gates.get("use", ["mahalanobis", "knn_density"]))
            cfg = cls(
                dataset_path=dataset["path"],
                truth_path=dataset.get("truth_path"),
                dim=int(dataset["dim"]),
                simhash_bits=int(simhash.get("n_bits", 64)),
                simhash_prefix_bits=int(simhash.get("prefix_bits", 12)),
                simhash_seed=int(simhash.get("seed", 1)),
                sampler_budget=int(sampler["budget"]),
                sampler_floor=int(sampler.get("floor", 0)),
                sampler_seed=int(sampler.get("seed", 2)),
                gate_names=gate_names,
                knn_k=int(gates.get("knn_k", 5)),
                required_votes=int(policy.get("required_votes", len(gate_names))),
                grid=tuple(cal.get("grid", DEFAULT_GRID)),
                max_contamination=float(cal.get("max_contamination", 0.01)),
                validation_fraction=float(cal.get("validation_fraction", 0.2)),
                test_fraction=float(cal.get("test_fraction", 0.2)),
                split_seed=int(cal.get("seed", 3)),
                estimator=cal.get("estimator", "true-label"),
                probe_radius_quantile=float(cal.get("probe_radius_quantile", 0.99)),
                output_dir=payload.get("output_dir"),
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load_json(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_json_dict(json.loads(path.read_text()))

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if not 1 <= self.simhash_bits <= 256:
            raise ConfigError(f"simhash n_bits out of 1..256: {self.simhash_bits}")
        if not 1 <= self.simhash_prefix_bits <= self.simhash_bits:
            raise ConfigError(
                f"prefix_bits {self.simhash_prefix_bits} out of "
                f"1..{self.simhash_bits}"
            )
        if self.sampler_budget < 1:
            raise ConfigError(f"budget must be >= 1, got {self.sampler_budget}")
        if self.sampler_floor < 0:
            raise ConfigError(f"floor must be >= 0, got {self.sampler_floor}")
        if not self.gate_names:
            raise ConfigError("at least one gate must be configured")
        for name in self.gate_names:
            if name not in GATE_TYPES:
                raise ConfigError(f"unknown gate {name!r}")
        if not 1 <= self.required_votes <= len(self.gate_names):
            raise ConfigError(
                f"required_votes {self.required_votes} out of "
                f"1..{len(self.gate_names)}"
            )
        if self.knn_k < 1:
            raise ConfigError(f"knn_k must be >= 1, got {self.knn_k}")
        if not 0.0 < self.max_contamination < 1.0:
            raise ConfigError(
                f"max_contamination out of (0,1): {self.max_contamination}"
            )
        if self.estimator not in ESTIMATOR_METHODS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "true-label" and not self.truth_path:
            raise ConfigError("true-label estimator requires dataset.truth_path")
        # SplitSpec constructor enforces the fraction invariants
        SplitSpec(self.validation_fraction, self.test_fraction, self.split_seed)

    def with_seed_override(self, seed: int) -> "PipelineConfig":
        """Rebase every pipeline seed on one override value."""
        return dataclass_replace(
            self,
            simhash_seed=seed,
            sampler_seed=seed + 1,
            split_seed=seed + 2,
        )

    def to_json_dict(self) -> dict:
        return {
            "dataset": {
                "path": self.dataset_path,
                "truth_path": self.truth_path,
                "dim": self.dim,
            },
            "simhash": {
                "n_bits": self.simhash_bits,
                "prefix_bits": self.simhash_prefix_bits,
                "seed": self.simhash_seed,
            },
            "sampler": {
                "budget": self.sampler_budget,
                "floor": self.sampler_floor,
                "seed": self.sampler_seed,
            },
            "gates": {"use": list(self.gate_names), "knn_k": self.knn_k},
            "policy": {"required_votes": self.required_votes},
            "calibration": {
                "grid": list(self.grid),
                "max_contamination": self.max_contamination,
                "validation_fraction": self.validation_fraction,
                "test_fraction": self.test_fraction,
                "seed": self.split_seed,
                "estimator": self.estimator,
                "probe_radius_quantile": self.probe_radius_quantile,
            },
            "output_dir": self.output_dir,
        }

    @property
    def digest(self) -> str:
        canonical = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def dataclass_replace(obj, **changes):
    import dataclasses

    return dataclasses.replace(obj, **changes)


@dataclass
class PipelineState:
    """Deterministically derived shared state for the pipeline stages."""

    config: PipelineConfig
    data: Dataset
    sidecar: TruthSidecar | None
    splits: Splits
    standardizer: Standardizer

    def rows_for(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self.data.row(sid) for sid in ids], dtype=np.intp)

    def ids_in_split(self, split: frozenset[str], label: Label) -> list[str]:
        idx = self.data.indices_with_labels([label])
        return [self.data.ids[i] for i in idx if self.data.ids[i] in split]

    def standardized(self, ids: Sequence[str]) -> np.ndarray:
        rows = self.rows_for(ids)
        return self.standardizer.transform(self.data.features[rows])


def prepare(config: PipelineConfig) -> PipelineState:
    """Load data, split, and fit the shared standardizer (fit-split unlabeled)."""
    data = load_dataset(config.dataset_path, config.dim)
    sidecar = (
        TruthSidecar.load_csv(config.truth_path) if config.truth_path else None
    )
    spec = SplitSpec(
        config.validation_fraction, config.test_fraction, config.split_seed
    )
    splits = split_dataset(
        data, spec, required_labels=(Label.FRAUD, Label.UNLABELED)
    )
    fit_unlabeled = sorted(
        sid
        for sid in splits.fit
        if data.labels[data.row(sid)] is Label.UNLABELED
    )
    rows = [data.row(sid) for sid in fit_unlabeled]
    standardizer = Standardizer().fit(data.features[rows])
    return PipelineState(
        config=config,
        data=data,
        sidecar=sidecar,
        splits=splits,
        standardizer=standardizer,
    )


def build_gates(config: PipelineConfig) -> list[_GateBase]:
    gates: list[_GateBase] = []
    for name in config.gate_names:
        if name == "mahalanobis":
            gates.append(MahalanobisGate())
        elif name == "knn_density":
            gates.append(KnnDensityGate(k=config.knn_k))
    return gates


def make_estimator(state: PipelineState, gates: Sequence[_GateBase]):
    config = state.config
    if config.estimator == "true-label":
        if state.sidecar is None:
            raise ConfigError("true-label estimator requires a truth sidecar")
        return TrueLabelEstimator(state.sidecar)
    fraud_ids = state.ids_in_split(state.splits.fit, Label.FRAUD)
    fraud_X = state.standardized(fraud_ids)
    if config.estimator == "distance-probe":
        mahal = next(
            (g for g in gates if isinstance(g, MahalanobisGate)), None
        )
        if mahal is None:
            mahal = MahalanobisGate().fit(fraud_X)
        return DistanceProbeEstimator(
            mahal, fraud_X, radius_quantile=config.probe_radius_quantile
        )
    nonfraud_ids = state.ids_in_split(state.splits.fit, Label.NONFRAUD)
    if not nonfraud_ids:
        raise ConfigError("regression-probe estimator needs labeled nonfraud rows")
    return RegressionProbeEstimator(fraud_X, state.standardized(nonfraud_ids))


def stage_stratify(
    state: PipelineState,
) -> tuple[SimHashStratifier, StratumTable, AllocationPlan, list[str]]:
    """Stratify the fit-split unlabeled population, allocate, and draw."""
    config = state.config
    ids = sorted(
        sid
        for sid in state.splits.fit
        if state.data.labels[state.data.row(sid)] is Label.UNLABELED
    )
    X = state.standardized(ids)
    stratifier = SimHashStratifier(
        n_bits=config.simhash_bits,
        prefix_bits=config.simhash_prefix_bits,
        seed=config.simhash_seed,
    ).fit(X)
    table = stratifier.stratify(X)
    plan = allocate(table, config.sampler_budget, config.sampler_floor)
    candidates = draw(plan, table, ids, config.sampler_seed)
    return stratifier, table, plan, candidates


def stage_fit_gates(state: PipelineState) -> list[_GateBase]:
    fraud_ids = state.ids_in_split(state.splits.fit, Label.FRAUD)
    X = state.standardized(fraud_ids)
    gates = build_gates(state.config)
    for gate in gates:
        gate.fit(X)
    return gates


def stage_calibrate(
    state: PipelineState, gates: Sequence[_GateBase]
) -> CalibrationReport:
    """Sweep each gate on validation candidates and pick its threshold."""
    config = state.config
    estimator = make_estimator(state, gates)
    val_ids = state.ids_in_split(state.splits.validation, Label.UNLABELED)
    X_val = state.standardized(val_ids)
    sweeps = {
        gate.name: sweep_thresholds(gate, val_ids, X_val, estimator, config.grid)
        for gate in gates
    }
    chosen = select_thresholds(sweeps, config.max_contamination)
    for gate in gates:
        gate.set_threshold(chosen[gate.name].tau)
    return CalibrationReport(
        estimator_method=config.estimator,
        max_contamination=config.max_contamination,
        sweeps=sweeps,
        chosen=chosen,
    )


def stage_confirm(
    state: PipelineState, gates: Sequence[_GateBase]
) -> TestConfirmation:
    config = state.config
    val_ids = state.ids_in_split(state.splits.validation, Label.UNLABELED)
    test_ids = state.ids_in_split(state.splits.test, Label.UNLABELED)
    X_test = state.standardized(test_ids)
    estimator = make_estimator(state, gates)
    policy = VotingPolicy(config.required_votes, len(gates))
    return confirm_on_test(
        gates,
        policy,
        test_ids,
        X_test,
        estimator,
        config.max_contamination,
        validation_ids=val_ids,
    )


def stage_harvest(
    state: PipelineState,
    gates: Sequence[_GateBase],
    candidates: Sequence[str],
    threads: int = 1,
) -> tuple[list[HarvestRecord], HarvestManifest]:
    config = state.config
    policy = VotingPolicy(config.required_votes, len(gates))
    X = state.standardized(candidates)
    return harvest(candidates, X, gates, policy, threads=threads)


@dataclass
class RunResult:
    out_dir: Path
    config: PipelineConfig
    report: CalibrationReport
    plan: AllocationPlan
    candidates: list[str]
    records: list[HarvestRecord]
    manifest: HarvestManifest
    run_manifest: dict


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2))


def run_pipeline(
    config: PipelineConfig, out_dir: str | Path, threads: int = 1
) -> RunResult:
    """Execute stratify -> allocate/draw -> fit -> calibrate -> confirm ->
    harvest -> export, writing every artifact plus a run manifest.

    On a stage failure the manifest still lands, flagged partial, and the
    StageError propagates to the caller.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config.digest
    stages: list[dict] = []
    artifacts: dict[str, str] = {}
    manifest_payload: dict = {
        "config_digest": digest,
        "config": config.to_json_dict(),
        "stages": stages,
        "artifacts": artifacts,
        "partial": True,
    }

    def run_stage(name: str, fn):
        try:
            result = fn()
        except Exception as exc:
            stages.append({"name": name, "status": "failed", "error": str(exc)})
            _write_json(out / "run_manifest.json", manifest_payload)
            raise StageError(name, exc) from exc
        stages.append({"name": name, "status": "ok"})
        return result

    state = run_stage("prepare", lambda: prepare(config))

    def do_stratify():
        stratifier, table, plan, candidates = stage_stratify(state)
        fit_unlabeled = sorted(
            sid
            for sid in state.splits.fit
            if state.data.labels[state.data.row(sid)] is Label.UNLABELED
        )
        table.save_json(out / "strata.json", fit_unlabeled)
        plan.save_json(out / "allocation.json")
        _write_json(
            out / "candidates.json",
            {"config_digest": digest, "candidate_ids": candidates},
        )
        _write_json(
            out / "standardizer.json",
            {"config_digest": digest, **state.standardizer.to_dict()},
        )
        artifacts.update(
            {
                "strata": "strata.json",
                "allocation": "allocation.json",
                "candidates": "candidates.json",
                "standardizer": "standardizer.json",
            }
        )
        return table, plan, candidates

    table, plan, candidates = run_stage("stratify", do_stratify)
    gates = run_stage("fit_gates", lambda: stage_fit_gates(state))
    report = run_stage("calibrate", lambda: stage_calibrate(state, gates))

    def do_confirm():
        confirmation = stage_confirm(state, gates)
        report.test = confirmation
        report.save_json(out / "calibration.json")
        report.save_csv(out / "calibration.csv")
        _write_json(
            out / "gates.json",
            {"config_digest": digest, "gates": [g.to_dict() for g in gates]},
        )
        artifacts.update(
            {
                "calibration": "calibration.json",
                "calibration_csv": "calibration.csv",
                "gates": "gates.json",
            }
        )
        return confirmation

    confirmation = run_stage("confirm", do_confirm)

    def do_harvest():
        records, manifest = stage_harvest(state, gates, candidates, threads)
        manifest.config_digest = digest
        return records, manifest

    records, manifest = run_stage("harvest", do_harvest)

    def do_export():
        fit_rows = state.rows_for(sorted(state.splits.fit))
        training_source = state.data.take(fit_rows)
        export_training_set(records, training_source, out / "training.csv")
        manifest.training_csv = "training.csv"
        manifest.save_json(out / "harvest_manifest.json")
        artifacts.update(
            {
                "harvest_manifest": "harvest_manifest.json",
                "training": "training.csv",
            }
        )

    run_stage("export", do_export)

    manifest_payload.update(
        {
            "partial": False,
            "counts": {
                "dataset": len(state.data),
                "candidates": len(candidates),
                "scanned": manifest.scanned,
                "accepted": manifest.accepted,
            },
            "allocation": {
                "realized_total": plan.realized_total,
                "overshoot": plan.overshoot,
            },
            "calibration": {
                "chosen": {
                    name: vars(c) for name, c in sorted(report.chosen.items())
                },
                "test": vars(confirmation),
            },
        }
    )
    _write_json(out / "run_manifest.json", manifest_payload)
    return RunResult(
        out_dir=out,
        config=config,
        report=report,
        plan=plan,
        candidates=candidates,
        records=records,
        manifest=manifest,
        run_manifest=manifest_payload,
    )
