"""Acceptance criteria A1-A9.

Each test prints one PASS line with its measured quantities (run with
``pytest tests/test_acceptance.py -v -s``) and enforces the stated
tolerance and runtime budget.
"""

import json
import time

import numpy as np
import pytest

from negharvest.ablation import AblationArm, coverage_report, run_ablation
from negharvest.calibration import TrueLabelEstimator
from negharvest.cli import main
from negharvest.data import Label, save_dataset
from negharvest.gates import (
    KnnDensityGate,
    MahalanobisGate,
    ledoit_wolf_shrinkage,
)
from negharvest.harvest import VotingPolicy, harvest
from negharvest.pipeline import (
    PipelineConfig,
    prepare,
    run_pipeline,
    stage_calibrate,
    stage_fit_gates,
    stage_stratify,
)
from negharvest.probe import loss_and_gradient
from negharvest.sampling import allocate
from negharvest.simhash import SimHashStratifier
from negharvest.synth import builtin_scenario, generate

FINE_GRID = [0.005, 0.01, 0.02, 0.03, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9]


def report(criterion: str, detail: str) -> None:
    print(f"\n[PASS] {criterion}: {detail}")


def elapsed_guard(t0: float, limit: float, criterion: str) -> float:
    dt = time.time() - t0
    assert dt < limit, f"{criterion} exceeded its {limit}s budget ({dt:.1f}s)"
    return dt


@pytest.fixture(scope="module")
def scenario_files(tmp_path_factory):
    """Datasets for the scenario-driven criteria, generated once."""
    tmp = tmp_path_factory.mktemp("acceptance")
    out = {}
    for name, n in (("s1", 50_000), ("s2", 50_000), ("s23", 40_000)):
        data, sidecar = generate(builtin_scenario(name, n=n))
        save_dataset(data, tmp / f"{name}.csv")
        sidecar.save_csv(tmp / f"{name}_truth.csv")
        out[name] = (tmp / f"{name}.csv", tmp / f"{name}_truth.csv", sidecar)
    return tmp, out


def pipeline_config(dataset, truth, **overrides):
    payload = {
        "dataset": {"path": str(dataset), "truth_path": str(truth), "dim": 8},
        "simhash": {"n_bits": 64, "prefix_bits": 12, "seed": 11},
        "sampler": {"budget": 5000, "floor": 2, "seed": 12},
        "policy": {"required_votes": 2},
        "calibration": {"max_contamination": 0.01,
                        "validation_fraction": 0.2, "test_fraction": 0.2,
                        "seed": 13, "estimator": "true-label"},
    }
    for key, value in overrides.items():
        payload[key] = value
    return PipelineConfig.from_json_dict(payload)


def test_a1_simhash_collision_law():
    t0 = time.time()
    d, h, banks = 8, 64, 10_000
    angles = (0.0, np.pi / 4, np.pi / 2)
    u = np.zeros(d)
    u[0] = 1.0
    vs = []
    for theta in angles:
        v = np.zeros(d)
        v[0], v[1] = np.cos(theta), np.sin(theta)
        vs.append(v)
    agree = np.zeros(len(angles))
    queries = np.vstack([u] + vs)
    for seed in range(banks):
        s = SimHashStratifier(n_bits=h, prefix_bits=1, seed=seed).fit_dim(d)
        sigs = s.transform(queries)
        for j in range(len(angles)):
            agree[j] += (sigs[0] == sigs[1 + j]).sum()
    rates = agree / (banks * h)
    expected = np.array([1 - theta / np.pi for theta in angles])
    deviation = np.abs(rates - expected)
    assert (deviation < 0.02).all(), f"rates {rates} vs {expected}"
    dt = elapsed_guard(t0, 30.0, "A1")
    report("A1 SimHash collision law",
           f"max deviation {deviation.max():.4f} over {banks} banks "
           f"({dt:.1f}s)")


def test_a2_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    worst_rel = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 17))
        A = rng.standard_normal((d, d))
        sigma = A @ A.T + d * np.eye(d)
        gate = MahalanobisGate()
        gate.mean_ = rng.standard_normal(d)
        gate.covariance_ = sigma
        gate.chol_ = np.linalg.cholesky(sigma)
        x = rng.standard_normal((1, d))
        got = gate.score_samples(x)[0]
        diff = x[0] - gate.mean_
        want = float(np.sqrt(diff @ np.linalg.inv(sigma) @ diff))
        worst_rel = max(worst_rel, abs(got - want) / want)
    assert worst_rel <= 1e-8, f"mahalanobis rel err {worst_rel}"

    reference = rng.standard_normal((500, 6))
    gate = KnnDensityGate(k=5).fit(reference)
    queries = rng.standard_normal((50, 6))
    got = gate.score_samples(queries)
    want = np.array([
        np.sort(np.linalg.norm(reference - q, axis=1))[4] for q in queries
    ])
    knn_exact = np.max(np.abs(got - want))
    assert knn_exact <= 1e-12 * max(1.0, want.max()), f"knn dev {knn_exact}"
    dt = elapsed_guard(t0, 10.0, "A2")
    report("A2 oracle equivalence",
           f"mahalanobis rel err {worst_rel:.2e}, knn max dev {knn_exact:.2e} "
           f"({dt:.1f}s)")


def test_a3_ledoit_wolf_behavior():
    t0 = time.time()
    rng = np.random.default_rng(3)
    for _ in range(1000):
        n = int(rng.integers(2, 50))
        d = int(rng.integers(1, 16))
        Y = rng.standard_normal((n, d)) * rng.uniform(0.05, 10.0)
        _, rho = ledoit_wolf_shrinkage(Y - Y.mean(axis=0))
        assert 0.0 <= rho <= 1.0

    truth = np.diag([4.0, 1.0])
    Y = rng.standard_normal((10_000, 2)) * np.sqrt(np.diag(truth))
    Y -= Y.mean(axis=0)
    sigma, rho_big = ledoit_wolf_shrinkage(Y)
    frob = float(np.linalg.norm(sigma - truth, "fro"))
    assert rho_big < 0.05 and frob < 0.15

    sigma_small, _ = ledoit_wolf_shrinkage(rng.standard_normal((3, 50)))
    cond = float(np.linalg.cond(sigma_small))
    assert cond < 1e6
    dt = elapsed_guard(t0, 60.0, "A3")
    report("A3 Ledoit-Wolf behavior",
           f"rho in [0,1] on 1000 fits; n=10000: rho={rho_big:.4f}, "
           f"frob={frob:.3f}; n=3,d=50: cond={cond:.1f} ({dt:.1f}s)")


def test_a4_nesting_and_intersection(scenario_files):
    t0 = time.time()
    tmp, files = scenario_files
    dataset, truth, sidecar = files["s2"]
    config = pipeline_config(dataset, truth)
    state = prepare(config)
    gates = stage_fit_gates(state)
    stage_calibrate(state, gates)
    _, _, _, candidates = stage_stratify(state)
    X = state.standardized(candidates)

    strict, _ = harvest(candidates, X, gates, VotingPolicy(2, 2))
    relaxed, _ = harvest(candidates, X, gates, VotingPolicy(1, 2))
    accepted_strict = {r.sample_id for r in strict if r.accepted}
    accepted_relaxed = {r.sample_id for r in relaxed if r.accepted}
    assert accepted_strict <= accepted_relaxed

    per_gate = {
        g.name: {r.sample_id for r in strict if r.margins[g.name] >= 0.0}
        for g in gates
    }
    intersection = set.intersection(*per_gate.values())
    assert accepted_strict == intersection

    def fraud_count(ids):
        return sum(1 for sid in ids if sidecar.truth[sid] is Label.FRAUD)

    unanimous_fraud = fraud_count(accepted_strict)
    single_frauds = {name: fraud_count(ids) for name, ids in per_gate.items()}
    assert unanimous_fraud <= min(single_frauds.values())
    dt = elapsed_guard(t0, 120.0, "A4")
    report("A4 nesting & intersection",
           f"|k=2|={len(accepted_strict)} subset of |k=1|={len(accepted_relaxed)}; "
           f"unanimous fraud {unanimous_fraud} <= single-gate "
           f"{single_frauds} ({dt:.1f}s)")


def test_a5_contamination_target(scenario_files, tmp_path):
    t0 = time.time()
    tmp, files = scenario_files
    dataset, truth, _ = files["s1"]
    config = pipeline_config(dataset, truth)
    result = run_pipeline(config, tmp_path / "a5")
    test = result.report.test
    assert test.contamination <= 0.01, f"test contamination {test.contamination}"
    assert result.manifest.accepted >= 1000, f"yield {result.manifest.accepted}"
    dt = elapsed_guard(t0, 180.0, "A5")
    report("A5 contamination target",
           f"test contamination {test.contamination:.5f} <= 0.01, "
           f"harvested {result.manifest.accepted} >= 1000 ({dt:.1f}s)")


def test_a6_counterfactual_coverage(scenario_files):
    t0 = time.time()
    tmp, files = scenario_files
    dataset, truth, sidecar = files["s23"]
    floor = 10
    config = pipeline_config(
        dataset, truth,
        sampler={"budget": 1200, "floor": floor, "seed": 12},
        calibration={"grid": FINE_GRID, "max_contamination": 0.002,
                     "validation_fraction": 0.2, "test_fraction": 0.2,
                     "seed": 13, "estimator": "true-label"},
    )

    # floor coverage of the rare cohort's buckets
    state = prepare(config)
    stratifier, table, plan, candidates = stage_stratify(state)
    fit_unlabeled = sorted(
        sid for sid in state.splits.fit
        if state.data.labels[state.data.row(sid)] is Label.UNLABELED
    )
    coverage = coverage_report(table, fit_unlabeled, candidates, floor)
    rare_ids = {sid for sid in fit_unlabeled
                if sidecar.cohort[sid] == "rare"}
    index_of = {sid: i for i, sid in enumerate(fit_unlabeled)}
    rare_keys = {
        key for key, members in table.buckets.items()
        if any(fit_unlabeled[i] in rare_ids for i in members)
    }
    assert rare_keys, "rare cohort landed in no bucket"
    by_key = {b.key: b for b in coverage.buckets}
    for key in rare_keys:
        bucket = by_key[key]
        assert bucket.sampled >= min(floor, bucket.population), (
            f"rare bucket {key} sampled {bucket.sampled} of "
            f"{bucket.population} (floor {floor})"
        )

    # probe FPR on the super-fan cohort, full pipeline vs random
    # undersampling at matched yield
    arms = (
        AblationArm(name="full_pipeline", sampler="simhash",
                    gates=("mahalanobis", "knn_density"), floor=floor),
        AblationArm(name="random_baseline", sampler="random",
                    match_yield=True),
    )
    results = run_ablation(config, arms)
    full = results["full_pipeline"]
    rand = results["random_baseline"]
    assert abs(full.yield_count - rand.yield_count) <= max(
        1, 0.01 * full.yield_count
    )
    fpr_full = full.fpr_by_cohort["superfan"]
    fpr_rand = rand.fpr_by_cohort["superfan"]
    assert fpr_full < fpr_rand, (
        f"superfan FPR {fpr_full:.3f} (full) vs {fpr_rand:.3f} (random)"
    )
    dt = elapsed_guard(t0, 300.0, "A6")
    report("A6 counterfactual coverage",
           f"{len(rare_keys)} rare buckets all at floor; superfan FPR "
           f"{fpr_full:.3f} (full) < {fpr_rand:.3f} (random) at matched "
           f"yield {full.yield_count} ({dt:.1f}s)")


def test_a7_sampler_proportionality():
    t0 = time.time()
    from tests.test_sampling import table_from_pops

    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 40))
        pops = {f"b{i:03d}": int(rng.integers(1, 800)) for i in range(k)}
        total = sum(pops.values())
        budget = int(rng.integers(1, total + 1))
        plan = allocate(table_from_pops(pops), budget, floor=0)
        for key, pop in pops.items():
            worst = max(worst, abs(plan.quotas[key] - budget * pop / total))
    assert worst < 1.0
    dt = elapsed_guard(t0, 5.0, "A7")
    report("A7 sampler proportionality",
           f"max |quota - share| = {worst:.4f} < 1 over 100 tables ({dt:.1f}s)")


def test_a8_cli_determinism(scenario_files, tmp_path, capsys):
    t0 = time.time()
    tmp, files = scenario_files
    dataset, truth, _ = files["s1"]
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps({
        "dataset": {"path": str(dataset), "truth_path": str(truth), "dim": 8},
        "simhash": {"n_bits": 64, "prefix_bits": 12, "seed": 11},
        "sampler": {"budget": 3000, "floor": 2, "seed": 12},
        "policy": {"required_votes": 2},
        "calibration": {"max_contamination": 0.01,
                        "validation_fraction": 0.2, "test_fraction": 0.2,
                        "seed": 13, "estimator": "true-label"},
    }))
    assert main(["run", "--config", str(cfg_path), "--threads", "1",
                 "--out", str(tmp_path / "t1")]) == 0
    assert main(["run", "--config", str(cfg_path), "--threads", "8",
                 "--out", str(tmp_path / "t8")]) == 0
    capsys.readouterr()
    identical = []
    for name in ("training.csv", "run_manifest.json", "harvest_manifest.json"):
        a = (tmp_path / "t1" / name).read_bytes()
        b = (tmp_path / "t8" / name).read_bytes()
        assert a == b, f"{name} differs between thread counts"
        identical.append(name)
    dt = elapsed_guard(t0, 120.0, "A8")
    report("A8 determinism",
           f"byte-identical {identical} at --threads 1 vs 8 ({dt:.1f}s)")


def test_a9_probe_gradient_check():
    t0 = time.time()
    rng = np.random.default_rng(9)
    X = rng.standard_normal((60, 4))
    y = (rng.random(60) > 0.5).astype(float)
    w = rng.uniform(0.5, 2.0, size=60)
    h = 1e-6
    worst = 0.0
    for _ in range(5):
        params = rng.standard_normal(5)
        _, analytic = loss_and_gradient(params, X, y, w)
        numeric = np.zeros_like(params)
        for i in range(params.size):
            up, down = params.copy(), params.copy()
            up[i] += h
            down[i] -= h
            numeric[i] = (loss_and_gradient(up, X, y, w)[0]
                          - loss_and_gradient(down, X, y, w)[0]) / (2 * h)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
        worst = max(worst, float(rel.max()))
    assert worst < 1e-5
    dt = elapsed_guard(t0, 10.0, "A9")
    report("A9 probe gradient check",
           f"max relative error {worst:.2e} < 1e-5 at 5 points ({dt:.1f}s)")
