"""Seeded Gaussian-mixture populations with exact hidden ground truth.

Contamination and coverage can only be measured against known truth, so
every generated sample gets a sidecar record with its planted label and
cohort. The sidecar lives in its own file; no pipeline stage can consume it
by accident.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, Label
from .sampling import largest_remainder


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class CohortSpec:
    """One mixture component.

    label is the visible label its samples carry; truth is the planted
    ground truth (must be fraud or nonfraud). Covariance may be given as a
    scalar (isotropic), a length-d diagonal, or a full SPD matrix.
    """

    name: str
    label: Label
    truth: Label
    mean: np.ndarray
    covariance: np.ndarray
    proportion: float

    def __post_init__(self):
        if self.truth not in (Label.FRAUD, Label.NONFRAUD):
            raise ScenarioError(
                f"cohort {self.name!r}: truth must be fraud or nonfraud"
            )
        if not 0.0 < self.proportion <= 1.0:
            raise ScenarioError(
                f"cohort {self.name!r}: proportion {self.proportion} out of (0,1]"
            )


def _as_covariance(cov, dim: int) -> np.ndarray:
    arr = np.asarray(cov, dtype=np.float64)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ScenarioError(f"diagonal covariance length {arr.shape[0]} != dim {dim}")
        return np.diag(arr)
    if arr.shape != (dim, dim):
        raise ScenarioError(f"covariance shape {arr.shape} != ({dim}, {dim})")
    return arr


@dataclass(frozen=True)
class ScenarioConfig:
    """Full recipe for one synthetic population."""

    name: str
    dim: int
    n: int
    seed: int
    hidden_fraud_rate: float
    cohorts: tuple[CohortSpec, ...]

    def __post_init__(self):
        if not 0.0 <= self.hidden_fraud_rate < 1.0:
            raise ScenarioError(
                f"hidden_fraud_rate {self.hidden_fraud_rate} out of [0,1)"
            )
        total = sum(c.proportion for c in self.cohorts)
        if abs(total - 1.0) > 1e-9:
            raise ScenarioError(f"cohort proportions sum to {total}, expected 1")
        names = [c.name for c in self.cohorts]
        if len(set(names)) != len(names):
            raise ScenarioError("cohort names must be unique")

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "n": self.n,
            "seed": self.seed,
            "hidden_fraud_rate": self.hidden_fraud_rate,
            "cohorts": [
                {
                    "name": c.name,
                    "label": c.label.value,
                    "truth": c.truth.value,
                    "mean": c.mean.tolist(),
                    "covariance": c.covariance.tolist(),
                    "proportion": c.proportion,
                }
                for c in self.cohorts
            ],
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ScenarioConfig":
        dim = int(payload["dim"])
        cohorts = tuple(
            CohortSpec(
                name=c["name"],
                label=Label(c["label"]),
                truth=Label(c["truth"]),
                mean=np.asarray(c["mean"], dtype=np.float64),
                covariance=_as_covariance(c["covariance"], dim),
                proportion=float(c["proportion"]),
            )
            for c in payload["cohorts"]
        )
        return cls(
            name=payload["name"],
            dim=dim,
            n=int(payload["n"]),
            seed=int(payload["seed"]),
            hidden_fraud_rate=float(payload["hidden_fraud_rate"]),
            cohorts=cohorts,
        )

    @classmethod
    def load_json(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass
class TruthSidecar:
    """Ground truth and cohort membership for every generated id."""

    truth: dict[str, Label]
    cohort: dict[str, str]

    def lookup(self, sample_id: str) -> Label:
        try:
            return self.truth[sample_id]
        except KeyError:
            raise KeyError(f"unknown sample id {sample_id!r}") from None

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "truth", "cohort"])
            for sid in self.truth:
                writer.writerow([sid, self.truth[sid].value, self.cohort[sid]])

    @classmethod
    def load_csv(cls, path: str | Path) -> "TruthSidecar":
        truth: dict[str, Label] = {}
        cohort: dict[str, str] = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["id", "truth"]:
                raise ScenarioError(f"{path}: bad sidecar header {header!r}")
            for row in reader:
                truth[row[0]] = Label(row[1])
                cohort[row[0]] = row[2] if len(row) > 2 else ""
        return cls(truth=truth, cohort=cohort)


def generate(scenario: ScenarioConfig) -> tuple[Dataset, TruthSidecar]:
    """Draw the population: cohort by cohort, then plant hidden fraud.

    Cohort sizes are apportioned from the proportions by largest remainder,
    so they are exact and deterministic. Hidden fraud is planted by
    per-sample Bernoulli(hidden_fraud_rate) over the unlabeled rows; a
    planted row is redrawn from the first fraud-truth cohort's distribution
    and its sidecar truth flips to fraud.
    """
    rng = np.random.default_rng(scenario.seed)
    counts = largest_remainder(
        {c.name: c.proportion for c in scenario.cohorts}, scenario.n
    )
    fraud_anchor = next(
        (c for c in scenario.cohorts if c.truth is Label.FRAUD), None
    )
    if fraud_anchor is None and scenario.hidden_fraud_rate > 0:
        raise ScenarioError(
            "hidden_fraud_rate > 0 requires a fraud-truth cohort to draw from"
        )

    chols = {}
    for c in scenario.cohorts:
        try:
            chols[c.name] = np.linalg.cholesky(c.covariance)
        except np.linalg.LinAlgError:
            raise ScenarioError(
                f"cohort {c.name!r}: covariance is not positive definite"
            ) from None

    ids: list[str] = []
    labels: list[Label] = []
    blocks: list[np.ndarray] = []
    truth: dict[str, Label] = {}
    cohort_of: dict[str, str] = {}
    counter = 0
    for c in scenario.cohorts:
        count = counts[c.name]
        if count == 0:
            continue
        z = rng.standard_normal((count, scenario.dim))
        block = c.mean + z @ chols[c.name].T
        blocks.append(block)
        for _ in range(count):
            sid = f"x{counter:06d}"
            ids.append(sid)
            labels.append(c.label)
            truth[sid] = c.truth
            cohort_of[sid] = c.name
            counter += 1
    features = (
        np.vstack(blocks)
        if blocks
        else np.empty((0, scenario.dim), dtype=np.float64)
    )

    if scenario.hidden_fraud_rate > 0:
        anchor_chol = chols[fraud_anchor.name]
        unlabeled_rows = [
            i for i, lab in enumerate(labels) if lab is Label.UNLABELED
        ]
        mask = rng.random(len(unlabeled_rows)) < scenario.hidden_fraud_rate
        for j, i in enumerate(unlabeled_rows):
            if mask[j]:
                z = rng.standard_normal(scenario.dim)
                features[i] = fraud_anchor.mean + anchor_chol @ z
                truth[ids[i]] = Label.FRAUD
                cohort_of[ids[i]] = fraud_anchor.name

    data = Dataset(dim=scenario.dim, ids=ids, features=features, labels=labels)
    return data, TruthSidecar(truth=truth, cohort=cohort_of)


# ---------------------------------------------------------------------------
# Built-in scenarios (d=8).
#
# The legitimate population is a set of behavioral archetypes: antipodal
# pairs of tight cohorts along four orthonormal Hadamard directions, so the
# SimHash buckets correspond to genuine behavior patterns rather than to
# arbitrary slices of one blob. Fraud, super-fans, the rare stratum, and the
# suspicious band live along the remaining four orthogonal directions.
#
# Raw coordinates are scaled so that pipeline-standardized distances land
# near the nominal geometry: fraud about 6 standardized units from every
# mainstream archetype, the super-fan mean about 1.5 units from the fraud
# mean. Fraud is tight (bot-like uniformity); super-fans are a
# heterogeneous satellite; the rare stratum is a compact distinct cohort.
# ---------------------------------------------------------------------------

DIM = 8

_H = np.array(
    [
        [1, 1, 1, 1, 1, 1, 1, 1],
        [1, -1, 1, -1, 1, -1, 1, -1],
        [1, 1, -1, -1, 1, 1, -1, -1],
        [1, -1, -1, 1, 1, -1, -1, 1],
        [1, 1, 1, 1, -1, -1, -1, -1],
        [1, -1, 1, -1, -1, 1, -1, 1],
        [1, 1, -1, -1, -1, -1, 1, 1],
        [1, -1, -1, 1, -1, 1, 1, -1],
    ],
    dtype=np.float64,
) / math.sqrt(DIM)

# population std is ~1.53 per feature; raw scale = target standardized scale
# times that factor (verified by the scenario calibration test)
_SCALE = 1.53
ARCHETYPE_RADIUS = 4.0
ARCHETYPE_SIGMA = 0.35

FRAUD_MEAN = 8.3 * _H[4]
FRAUD_SIGMA = 0.2 * _SCALE
SUPERFAN_MEAN = FRAUD_MEAN + 1.5 * _SCALE * _H[5]
SUPERFAN_SIGMA = 0.8 * _SCALE
RARE_MEAN = 9.0 * _H[6]
RARE_SIGMA = 0.4
SUSPICIOUS_MEAN = 0.5 * FRAUD_MEAN
SUSPICIOUS_SIGMA = 0.7


def _cohort(name, label, truth, mean, sigma, proportion) -> CohortSpec:
    return CohortSpec(
        name=name,
        label=label,
        truth=truth,
        mean=np.asarray(mean, dtype=np.float64),
        covariance=_as_covariance(sigma**2, DIM),
        proportion=proportion,
    )


def _base_cohorts(mainstream_prop: float) -> list[CohortSpec]:
    cohorts = []
    share = mainstream_prop / 8.0
    for k in range(4):
        for sign, tag in ((1.0, "pos"), (-1.0, "neg")):
            cohorts.append(
                _cohort(
                    f"archetype_{k}{tag}",
                    Label.UNLABELED,
                    Label.NONFRAUD,
                    sign * ARCHETYPE_RADIUS * _H[k],
                    ARCHETYPE_SIGMA,
                    share,
                )
            )
    cohorts += [
        _cohort("labeled_fraud", Label.FRAUD, Label.FRAUD,
                FRAUD_MEAN, FRAUD_SIGMA, 0.01),
        _cohort("labeled_nonfraud", Label.NONFRAUD, Label.NONFRAUD,
                ARCHETYPE_RADIUS * _H[0], ARCHETYPE_SIGMA, 0.02),
        _cohort("suspicious", Label.SUSPICIOUS, Label.NONFRAUD,
                SUSPICIOUS_MEAN, SUSPICIOUS_SIGMA, 0.01),
    ]
    return cohorts


def builtin_scenario(name: str, n: int = 50_000, seed: int = 20240601) -> ScenarioConfig:
    """Built-in scenario recipes: s1, s2, s3, s23."""
    superfan = _cohort("superfan", Label.UNLABELED, Label.NONFRAUD,
                       SUPERFAN_MEAN, SUPERFAN_SIGMA, 0.02)
    rare = _cohort("rare", Label.UNLABELED, Label.NONFRAUD,
                   RARE_MEAN, RARE_SIGMA, 0.002)
    if name == "s1":
        cohorts = _base_cohorts(0.96)
    elif name == "s2":
        cohorts = _base_cohorts(0.94) + [superfan]
    elif name == "s3":
        cohorts = _base_cohorts(0.958) + [rare]
    elif name == "s23":
        cohorts = _base_cohorts(0.938) + [superfan, rare]
    else:
        raise ScenarioError(f"unknown builtin scenario {name!r}")
    return ScenarioConfig(
        name=name,
        dim=DIM,
        n=n,
        seed=seed,
        hidden_fraud_rate=0.01,
        cohorts=tuple(cohorts),
    )


BUILTIN_SCENARIOS = ("s1", "s2", "s3", "s23")
