"""Command-line interface.

Subcommands mirror the pipeline stages so a threshold re-sweep never forces
a re-stratification: gen, run, ablate, plus stagewise stratify / calibrate /
harvest. Exit codes are a stable contract: 0 success, 1 validation error,
2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .ablation import AblationArm, DEFAULT_ARMS, run_ablation
from .data import DataError, Label, save_dataset
from .gates import gate_from_dict
from .harvest import export_training_set, harvest, VotingPolicy
from .pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    prepare,
    run_pipeline,
    stage_calibrate,
    stage_confirm,
    stage_fit_gates,
    stage_stratify,
)
from .preprocessing import Standardizer
from .synth import (
    BUILTIN_SCENARIOS,
    ScenarioConfig,
    ScenarioError,
    builtin_scenario,
    generate,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_STAGE = 2


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.load_json(args.config)
    if args.seed_override is not None:
        config = config.with_seed_override(args.seed_override)
    return config


def _out_dir(args, config: PipelineConfig | None = None) -> Path:
    if args.out:
        return Path(args.out)
    if config is not None and config.output_dir:
        return Path(config.output_dir)
    raise ConfigError("no output directory: pass --out or set output_dir")


def cmd_gen(args) -> int:
    if args.scenario in BUILTIN_SCENARIOS:
        scenario = builtin_scenario(args.scenario)
    else:
        path = Path(args.scenario)
        if not path.exists():
            raise ConfigError(f"scenario file not found: {path}")
        scenario = ScenarioConfig.load_json(path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, sidecar = generate(scenario)
    save_dataset(data, out / "dataset.csv")
    sidecar.save_csv(out / "truth.csv")
    scenario.save_json(out / "scenario.json")
    print(
        f"wrote {len(data)} samples to {out / 'dataset.csv'} "
        f"(+ truth.csv, scenario.json)"
    )
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    result = run_pipeline(config, out, threads=args.threads)
    test = result.report.test
    print(f"config digest: {config.digest}")
    print(
        f"candidates: {len(result.candidates)}  "
        f"harvested: {result.manifest.accepted}"
    )
    print(
        f"test contamination: {test.contamination:.6f} "
        f"(constraint {'met' if test.passed else 'NOT met'}), "
        f"test yield: {test.yield_count}"
    )
    return EXIT_OK


def cmd_stratify(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    state = prepare(config)
    _, table, plan, candidates = stage_stratify(state)
    fit_unlabeled = sorted(
        sid
        for sid in state.splits.fit
        if state.data.labels[state.data.row(sid)] is Label.UNLABELED
    )
    table.save_json(out / "strata.json", fit_unlabeled)
    plan.save_json(out / "allocation.json")
    (out / "candidates.json").write_text(
        json.dumps(
            {"config_digest": config.digest, "candidate_ids": candidates},
            indent=2,
        )
    )
    (out / "standardizer.json").write_text(
        json.dumps(
            {"config_digest": config.digest, **state.standardizer.to_dict()},
            indent=2,
        )
    )
    print(
        f"{len(table.buckets)} buckets, plan total {plan.realized_total}"
        f"{' (overshoot)' if plan.overshoot else ''}, "
        f"{len(candidates)} candidates drawn"
    )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    state = prepare(config)
    gates = stage_fit_gates(state)
    report = stage_calibrate(state, gates)
    report.test = stage_confirm(state, gates)
    report.save_json(out / "calibration.json")
    report.save_csv(out / "calibration.csv")
    (out / "gates.json").write_text(
        json.dumps(
            {"config_digest": config.digest,
             "gates": [g.to_dict() for g in gates]},
            indent=2,
        )
    )
    (out / "standardizer.json").write_text(
        json.dumps(
            {"config_digest": config.digest, **state.standardizer.to_dict()},
            indent=2,
        )
    )
    for name, chosen in sorted(report.chosen.items()):
        flag = "" if chosen.constraint_met else " (constraint unmet)"
        print(
            f"{name}: tau={chosen.tau:.6f} @q={chosen.quantile} "
            f"contamination={chosen.contamination:.6f}{flag}"
        )
    print(
        f"test contamination {report.test.contamination:.6f}, "
        f"yield {report.test.yield_count}"
    )
    return EXIT_OK


def cmd_harvest(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    gates_path = out / "gates.json"
    candidates_path = out / "candidates.json"
    standardizer_path = out / "standardizer.json"
    for path in (gates_path, candidates_path, standardizer_path):
        if not path.exists():
            raise ConfigError(
                f"missing stage artifact {path}; run stratify and calibrate first"
            )
    gates = [
        gate_from_dict(p)
        for p in json.loads(gates_path.read_text())["gates"]
    ]
    candidates = json.loads(candidates_path.read_text())["candidate_ids"]
    standardizer = Standardizer.from_dict(
        json.loads(standardizer_path.read_text())
    )
    state = prepare(config)
    rows = state.rows_for(candidates)
    X = standardizer.transform(state.data.features[rows])
    policy = VotingPolicy(config.required_votes, len(gates))
    records, manifest = harvest(candidates, X, gates, policy,
                                threads=args.threads)
    manifest.config_digest = config.digest
    fit_rows = state.rows_for(sorted(state.splits.fit))
    export_training_set(records, state.data.take(fit_rows),
                        out / "training.csv")
    manifest.training_csv = "training.csv"
    manifest.save_json(out / "harvest_manifest.json")
    print(f"scanned {manifest.scanned}, accepted {manifest.accepted}")
    return EXIT_OK


def _load_arms(path: str | None) -> tuple[AblationArm, ...]:
    if path is None:
        return DEFAULT_ARMS
    arms_path = Path(path)
    if not arms_path.exists():
        raise ConfigError(f"arms file not found: {arms_path}")
    payload = json.loads(arms_path.read_text())
    arms = []
    for entry in payload["arms"]:
        arms.append(
            AblationArm(
                name=entry["name"],
                sampler=entry["sampler"],
                gates=tuple(entry.get("gates", ())),
                floor=int(entry.get("floor", 0)),
                required_votes=entry.get("required_votes"),
                match_yield=bool(entry.get("match_yield", False)),
            )
        )
    return tuple(arms)


def cmd_ablate(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    arms = _load_arms(args.arms)
    results = run_ablation(config, arms, out_dir=out)
    for name, result in results.items():
        print(
            f"{name}: yield={result.yield_count} "
            f"contamination={result.contamination:.6f} "
            f"auprc={result.auprc:.4f}"
        )
    print(f"results written to {out / 'results.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="negharvest",
        description=(
            "Harvest confident negatives from an unlabeled population via "
            "SimHash-stratified sampling and a statistical gate ensemble."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset + sidecar")
    gen.add_argument(
        "--scenario",
        required=True,
        help=f"scenario JSON path or builtin name {BUILTIN_SCENARIOS}",
    )
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(fn=cmd_gen)

    def add_common(p, threads=False):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed-override", type=int, default=None,
                       help="rebase all pipeline seeds on this value")
        if threads:
            p.add_argument("--threads", type=int, default=1,
                           help="worker cap for candidate scoring")

    run = sub.add_parser("run", help="full pipeline: stratify through export")
    add_common(run, threads=True)
    run.set_defaults(fn=cmd_run)

    stratify = sub.add_parser("stratify", help="stratify, allocate, and draw")
    add_common(stratify)
    stratify.set_defaults(fn=cmd_stratify)

    calibrate = sub.add_parser("calibrate",
                               help="fit gates, sweep and pick thresholds")
    add_common(calibrate)
    calibrate.set_defaults(fn=cmd_calibrate)

    harvest_p = sub.add_parser("harvest",
                               help="harvest with previously written artifacts")
    add_common(harvest_p, threads=True)
    harvest_p.set_defaults(fn=cmd_harvest)

    ablate = sub.add_parser("ablate", help="run the sampler/gate ablation")
    add_common(ablate)
    ablate.add_argument("--arms", help="arms JSON (default: built-in arm set)")
    ablate.set_defaults(fn=cmd_ablate)
    return parser


VALIDATION_ERRORS = (
    ConfigError,
    ScenarioError,
    DataError,
    ValueError,
    FileNotFoundError,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # anything else is a stage-level failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
