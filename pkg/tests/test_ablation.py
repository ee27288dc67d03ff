import numpy as np
import pytest

from negharvest.ablation import (
    AblationArm,
    AblationError,
    auprc,
    coverage_report,
    pr_curve,
    run_ablation,
)
from negharvest.data import Label, save_dataset
from negharvest.pipeline import PipelineConfig
from negharvest.simhash import StratumTable
from negharvest.synth import builtin_scenario, generate


class TestPRCurve:
    def test_perfect_scorer(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        truth = np.array([1, 1, 0, 0])
        points = pr_curve(scores, truth, thresholds=[0.0, 0.5, 0.85])
        assert all(p.precision == 1.0 for p in points[1:])
        assert points[1].recall == 1.0

    def test_constant_scorer_base_rate(self):
        scores = np.full(100, 0.5)
        truth = np.zeros(100, dtype=int)
        truth[:10] = 1
        points = pr_curve(scores, truth, thresholds=[0.5])
        assert points[0].precision == pytest.approx(0.1)
        assert points[0].recall == 1.0

    def test_random_scorer_precision_near_base_rate(self):
        rng = np.random.default_rng(0)
        scores = rng.random(10_000)
        truth = rng.random(10_000) < 0.01
        points = pr_curve(scores, truth, thresholds=np.linspace(0.1, 0.8, 8))
        for p in points:
            assert abs(p.precision - 0.01) < 0.005

    def test_no_predicted_positives_flagged(self):
        points = pr_curve(np.array([0.1, 0.2]), np.array([1, 0]),
                          thresholds=[0.9])
        assert points[0].no_positives
        assert points[0].precision == 1.0

    def test_recall_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        scores = rng.random(500)
        truth = rng.random(500) < 0.2
        points = pr_curve(scores, truth)
        recalls = [p.recall for p in points]
        assert recalls == sorted(recalls, reverse=True)

    def test_empty_rejected(self):
        with pytest.raises(AblationError):
            pr_curve(np.array([]), np.array([]))

    def test_auprc_of_perfect_scorer(self):
        scores = np.linspace(0, 1, 100)
        truth = scores > 0.7
        assert auprc(pr_curve(scores, truth)) > 0.95


class TestCoverage:
    def _table(self):
        return StratumTable(prefix_bits=1, buckets={
            "0": np.array([0, 1, 2], dtype=np.intp),
            "1": np.array([3, 4], dtype=np.intp),
        })

    def test_full_sample_all_ratios_one(self):
        ids = [f"x{i}" for i in range(5)]
        report = coverage_report(self._table(), ids, ids, floor=1)
        assert all(b.ratio == 1.0 for b in report.buckets)
        assert report.floor_fraction == 1.0

    def test_empty_sample_all_ratios_zero(self):
        ids = [f"x{i}" for i in range(5)]
        report = coverage_report(self._table(), ids, [], floor=1)
        assert all(b.ratio == 0.0 for b in report.buckets)
        assert report.floor_fraction == 0.0

    def test_foreign_id_rejected(self):
        ids = [f"x{i}" for i in range(5)]
        with pytest.raises(AblationError):
            coverage_report(self._table(), ids, ["zzz"], floor=1)

    def test_floor_fraction_counts_min_floor_pop(self):
        ids = [f"x{i}" for i in range(5)]
        report = coverage_report(self._table(), ids, ["x0", "x1", "x3", "x4"],
                                 floor=2)
        # bucket 0: 2 of 3 sampled (>= floor 2); bucket 1: 2 of 2 (= pop)
        assert report.floor_fraction == 1.0


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ablation")
    data, sidecar = generate(builtin_scenario("s23", n=8000))
    save_dataset(data, tmp / "dataset.csv")
    sidecar.save_csv(tmp / "truth.csv")
    config = PipelineConfig.from_json_dict({
        "dataset": {"path": str(tmp / "dataset.csv"),
                    "truth_path": str(tmp / "truth.csv"), "dim": 8},
        "simhash": {"n_bits": 64, "prefix_bits": 10, "seed": 11},
        "sampler": {"budget": 800, "floor": 4, "seed": 12},
        "policy": {"required_votes": 2},
        "calibration": {"grid": [0.01, 0.02, 0.05, 0.1, 0.3, 0.6, 0.9],
                        "max_contamination": 0.01,
                        "validation_fraction": 0.2, "test_fraction": 0.2,
                        "seed": 13, "estimator": "true-label"},
    })
    arms = (
        AblationArm(name="full_pipeline", sampler="simhash",
                    gates=("mahalanobis", "knn_density"), floor=4),
        AblationArm(name="random_baseline", sampler="random", match_yield=True),
        AblationArm(name="mahalanobis_only", sampler="random",
                    gates=("mahalanobis",)),
        AblationArm(name="knn_only", sampler="random", gates=("knn_density",)),
        AblationArm(name="dual_unanimous", sampler="random",
                    gates=("mahalanobis", "knn_density")),
    )
    return tmp, config, arms, sidecar


class TestRunAblation:
    def test_results_complete_and_files_written(self, small_run):
        tmp, config, arms, _ = small_run
        results = run_ablation(config, arms, out_dir=tmp / "out")
        assert set(results) == {a.name for a in arms}
        assert (tmp / "out" / "results.csv").exists()
        for arm in arms:
            assert (tmp / "out" / f"pr_{arm.name}.csv").exists()

    def test_matched_yield_within_one_percent(self, small_run):
        tmp, config, arms, _ = small_run
        results = run_ablation(config, arms)
        full = results["full_pipeline"].yield_count
        rand = results["random_baseline"].yield_count
        assert abs(full - rand) <= max(1, 0.01 * full)

    def test_unanimous_contamination_below_single_gates(self, small_run):
        # shared candidates + shared thresholds make the accept sets nest,
        # so planted-fraud counts cannot exceed either single gate's
        tmp, config, arms, sidecar = small_run
        results = run_ablation(config, arms)
        def fraud_count(name):
            return sum(1 for sid in results[name].accepted_ids
                       if sidecar.truth[sid] is Label.FRAUD)
        dual = fraud_count("dual_unanimous")
        assert dual <= fraud_count("mahalanobis_only")
        assert dual <= fraud_count("knn_only")

    def test_unanimous_accept_sets_nest_in_single_gate(self, small_run):
        tmp, config, arms, _ = small_run
        results = run_ablation(config, arms)
        dual = results["dual_unanimous"].accepted_ids
        assert dual <= results["mahalanobis_only"].accepted_ids
        assert dual <= results["knn_only"].accepted_ids

    def test_deterministic_results_table(self, small_run, tmp_path):
        tmp, config, arms, _ = small_run
        run_ablation(config, arms, out_dir=tmp_path / "r1")
        run_ablation(config, arms, out_dir=tmp_path / "r2")
        assert ((tmp_path / "r1" / "results.csv").read_bytes()
                == (tmp_path / "r2" / "results.csv").read_bytes())

    def test_full_contamination_not_worse_than_random(self, small_run):
        tmp, config, arms, _ = small_run
        results = run_ablation(config, arms)
        assert (results["full_pipeline"].contamination
                <= results["random_baseline"].contamination)

    def test_duplicate_arm_names_rejected(self, small_run):
        tmp, config, _, _ = small_run
        arms = (AblationArm(name="a", sampler="random"),
                AblationArm(name="a", sampler="random"))
        with pytest.raises(AblationError):
            run_ablation(config, arms)


class TestArmValidation:
    def test_unknown_sampler(self):
        with pytest.raises(AblationError):
            AblationArm(name="x", sampler="quantum")

    def test_votes_without_gates(self):
        with pytest.raises(AblationError):
            AblationArm(name="x", sampler="random", required_votes=1)

    def test_match_yield_needs_random(self):
        with pytest.raises(AblationError):
            AblationArm(name="x", sampler="simhash", match_yield=True)
