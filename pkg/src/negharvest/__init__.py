"""Confident-negative harvesting for positive-unlabeled fraud data.

The pipeline stratifies an unlabeled population into behavioral buckets via
SimHash, samples it with per-bucket floor constraints, and filters the
sample through an ensemble of statistical gates fitted on labeled fraud.
Survivors become confidence-weighted negatives for downstream training.
"""

from .ablation import (
    AblationArm,
    ArmResult,
    CoverageReport,
    DEFAULT_ARMS,
    PRPoint,
    auprc,
    coverage_report,
    pr_curve,
    run_ablation,
    train_probe,
)
from .calibration import (
    CalibrationReport,
    ContaminationEstimate,
    DistanceProbeEstimator,
    RegressionProbeEstimator,
    SplitSpec,
    TrueLabelEstimator,
    confirm_on_test,
    select_thresholds,
    split_dataset,
    sweep_thresholds,
)
from .data import Dataset, Label, load_dataset, save_dataset
from .gates import (
    KnnDensityGate,
    MahalanobisGate,
    ledoit_wolf_shrinkage,
)
from .harvest import (
    HarvestManifest,
    HarvestRecord,
    VotingPolicy,
    confidence_weight,
    export_training_set,
    harvest,
    vote,
)
from .pipeline import PipelineConfig, run_pipeline
from .preprocessing import Standardizer, fit_standardizer
from .probe import LogisticProbe
from .sampling import AllocationPlan, allocate, draw, largest_remainder
from .simhash import SimHashStratifier, StratumTable
from .synth import (
    CohortSpec,
    ScenarioConfig,
    TruthSidecar,
    builtin_scenario,
    generate,
)

__version__ = "0.1.0"
