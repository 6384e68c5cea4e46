"""Command-line pipeline: fit, combine, model, generate, validate, bootstrap.

Each stage reads and writes plain CSV/JSON artifacts so any stage can be
re-run or replaced in isolation.  Exit codes: 0 success, 2 input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import combine as combine_mod
from . import ingest, pwl, tables
from . import validate as validate_mod
from .errors import InputError, LeadkinError, NumericalError
from .events import EventParams, SourceGroup
from .mvdist import ModelConfig, build_all, bundles_from_json, bundles_to_json
from .synth import assemble_synthetic, params_to_profile
from .validate import bootstrap_robustness, compare_datasets

log = logging.getLogger(__name__)

STAGES = ("fit", "combine", "model", "generate", "validate")


@dataclass
class PipelineConfig:
    """Flat, JSON-serializable configuration for the whole pipeline."""

    n_b_max: int = 3
    penalty: float = 0.006
    epsilon: float = 1e-6
    steady_slope_tol: float = 0.05
    max_restarts: int = 10
    convergence_tol: float = 1e-6
    d_thd: float = 0.78
    mass_threshold: float = 0.10
    corr_threshold: float = 0.30
    alpha_corr: float = 0.05
    alpha_ks: float = 0.10
    n_synth: int = 10000
    profile_dt: float = 0.1
    n_perm: int = 2000
    seed: int = 0
    input: str = "events.csv"
    workdir: str = "out"

    def fit_config(self) -> pwl.FitConfig:
        return pwl.FitConfig(
            n_b_max=self.n_b_max,
            penalty=self.penalty,
            epsilon=self.epsilon,
            steady_slope_tol=self.steady_slope_tol,
            max_restarts=self.max_restarts,
            convergence_tol=self.convergence_tol,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            mass_threshold=self.mass_threshold,
            corr_threshold=self.corr_threshold,
            alpha_corr=self.alpha_corr,
        )

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_json(doc: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(PipelineConfig)}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return PipelineConfig(**doc)

    @staticmethod
    def load(path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path} is not valid JSON: {exc}") from None
        return PipelineConfig.from_json(doc)


def event_rng(master_seed: int, event_id: str) -> np.random.Generator:
    """Per-event generator that is stable under event reordering."""
    digest = hashlib.sha256(f"{master_seed}:{event_id}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


# --- stages --------------------------------------------------------------------


def stage_fit(config: PipelineConfig, input_path, params_out, counts_out=None) -> None:
    input_path = Path(input_path)
    if not input_path.exists():
        raise InputError(f"input file not found: {input_path}")
    events = ingest.load_events(input_path)
    fit_cfg = config.fit_config()
    rows = []
    raw_counts: Dict[SourceGroup, int] = {}
    valid_events: List[EventParams] = []
    for event in events:
        raw_counts[event.source_group] = raw_counts.get(event.source_group, 0) + 1
        try:
            profile = ingest.window_event(event)
        except LeadkinError as exc:
            log.warning("skipping event %s: %s", event.event_id, exc)
            continue
        fit = pwl.fit_event(profile, fit_cfg, rng=event_rng(config.seed, event.event_id))
        params = pwl.extract_params(
            fit,
            fit_cfg,
            event_id=event.event_id,
            source_group=event.source_group,
            severity=event.severity,
            native_weight=event.native_weight,
        )
        valid = ingest.validate_event(profile, fit)
        rows.append({"event": params, "r2": fit.r_squared, "n_b": fit.n_b, "valid": valid})
        if valid:
            valid_events.append(params)
    tables.write_params_csv(params_out, rows)
    counts = combine_mod.GroupCounts.from_events(valid_events, raw_counts=raw_counts)
    if counts_out is None:
        counts_out = Path(params_out).with_suffix(".counts.json")
    tables.write_counts_json(counts_out, counts)
    log.info("fit: %d events, %d valid", len(rows), len(valid_events))


def stage_combine(
    config: PipelineConfig,
    params_path,
    combined_out,
    counts_path=None,
    threshold_quantile=None,
) -> None:
    params_path = Path(params_path)
    if not params_path.exists():
        raise InputError(f"parameter table not found: {params_path}")
    events = tables.read_params_csv(params_path)
    if counts_path is None:
        sidecar = params_path.with_suffix(".counts.json")
        counts_path = sidecar if sidecar.exists() else None
    if counts_path is not None:
        counts = tables.read_counts_json(counts_path)
    else:
        log.warning("no counts sidecar; deriving raw counts from the parameter table")
        counts = combine_mod.GroupCounts.from_events(events)
    crashes, ncs = combine_mod.split_near_crashes(events)
    preprocessed = combine_mod.preprocess(crashes + ncs, counts)
    plan = combine_mod.build_plan(preprocessed)
    combined_crash = combine_mod.reweight_combine(preprocessed, plan)
    threshold = config.d_thd
    if threshold_quantile is not None:
        threshold = combine_mod.distance_threshold_from_quantile(
            combined_crash, threshold_quantile
        )
        log.info("similarity threshold from quantile %.2f: %.4f", threshold_quantile, threshold)
    merged, merge_result = combine_mod.merge_near_crashes(
        combined_crash, ncs, distance_threshold=threshold
    )
    tables.write_combined_csv(combined_out, merged, merge_result)
    log.info(
        "combine: %d crashes + %d/%d near-crashes, total weight %.6f",
        len(combined_crash.events),
        len(merge_result.selected),
        len(ncs),
        merged.total_weight,
    )


def stage_model(config: PipelineConfig, combined_path, model_out) -> None:
    combined_path = Path(combined_path)
    if not combined_path.exists():
        raise InputError(f"combined dataset not found: {combined_path}")
    dataset = tables.read_combined_csv(combined_path)
    bundles = build_all(dataset, config.model_config())
    doc = bundles_to_json(bundles)
    Path(model_out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("model: %d bundles", len(bundles))


def stage_generate(
    config: PipelineConfig, model_path, synthetic_out, profiles_out=None, dt=None
) -> None:
    model_path = Path(model_path)
    if not model_path.exists():
        raise InputError(f"model artifact missing: {model_path}")
    doc = json.loads(model_path.read_text(encoding="utf-8"))
    bundles = bundles_from_json(doc)
    dataset = assemble_synthetic(bundles, config.n_synth, seed=config.seed)
    bundle_of: Dict[str, str] = {}
    offset = 0
    for bundle in bundles:
        count = dataset.per_bundle_counts[bundle.bundle_id]
        for e in dataset.events[offset : offset + count]:
            bundle_of[e.event_id] = bundle.bundle_id
        offset += count
    tables.write_synthetic_csv(synthetic_out, dataset, bundle_of)
    if profiles_out is not None:
        profiles = (params_to_profile(e, dt or config.profile_dt) for e in dataset.events)
        tables.write_profiles_csv(profiles_out, profiles)
    log.info("generate: %d events", len(dataset.events))


def stage_validate(config: PipelineConfig, combined_path, synthetic_path, report_out) -> None:
    for p in (combined_path, synthetic_path):
        if not Path(p).exists():
            raise InputError(f"artifact missing: {p}")
    raw = tables.read_combined_csv(combined_path)
    synthetic = tables.read_synthetic_csv(synthetic_path)
    report = compare_datasets(
        raw, synthetic, alpha=config.alpha_ks, n_perm=config.n_perm, seed=config.seed
    )
    ecdf_points = {}
    from .events import PARAM_NAMES, params_matrix

    raw_matrix = params_matrix(raw.events)
    syn_matrix = params_matrix(synthetic.events)
    for j, name in enumerate(PARAM_NAMES):
        raw_ecdf = validate_mod.weighted_ecdf(raw_matrix[:, j], raw.weights())
        syn_ecdf = validate_mod.weighted_ecdf(syn_matrix[:, j])
        ecdf_points[name] = {
            "raw": [[float(a), float(b)] for a, b in zip(raw_ecdf.support, raw_ecdf.cumulative)],
            "synthetic": [[float(a), float(b)] for a, b in zip(syn_ecdf.support, syn_ecdf.cumulative)],
        }
    doc = {"alpha": config.alpha_ks, "parameters": report, "ecdf": ecdf_points}
    Path(report_out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    worst = min(report.values(), key=lambda r: r["p_value"])
    log.info("validate: smallest p-value %.4f", worst["p_value"])


def run_pipeline(config: PipelineConfig, stage: Optional[str] = None) -> List[Path]:
    workdir = Path(config.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "params": workdir / "params.csv",
        "counts": workdir / "params.counts.json",
        "combined": workdir / "combined.csv",
        "model": workdir / "model.json",
        "synthetic": workdir / "synthetic.csv",
        "report": workdir / "report.json",
    }
    stages = STAGES if stage is None else (stage,)
    if stage is not None and stage not in STAGES:
        raise InputError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    for name in stages:
        if name == "fit":
            stage_fit(config, config.input, paths["params"], paths["counts"])
        elif name == "combine":
            stage_combine(config, paths["params"], paths["combined"], paths["counts"])
        elif name == "model":
            stage_model(config, paths["combined"], paths["model"])
        elif name == "generate":
            stage_generate(config, paths["model"], paths["synthetic"])
        elif name == "validate":
            stage_validate(config, paths["combined"], paths["synthetic"], paths["report"])
    return [paths[k] for k in ("params", "combined", "model", "synthetic", "report")]


# --- argument parsing ------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leadkin",
        description="Lead-vehicle speed-profile parameterization, dataset "
        "combination, distribution modeling, and synthetic generation.",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--verbose", action="store_true")
    # the global flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit piecewise-linear models to raw speed series")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="params.csv")
    p.add_argument("--counts-out", default=None)
    p.add_argument("--lambda", dest="penalty", type=float, default=None)
    p.add_argument("--nb-max", type=int, default=None)

    p = sub.add_parser("combine", parents=[common], help="combine crash sources and merge near-crashes")
    p.add_argument("--params", required=True)
    p.add_argument("--counts", default=None)
    p.add_argument("--d-thd", type=float, default=None)
    p.add_argument(
        "--d-thd-quantile",
        type=float,
        default=None,
        help="derive the similarity threshold from this quantile of the "
        "crash-to-crash minimum-distance CDF instead of --d-thd",
    )
    p.add_argument("--output", default="combined.csv")

    p = sub.add_parser("model", parents=[common], help="build per-pattern distribution models")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="model.json")
    p.add_argument("--mass-threshold", type=float, default=None)
    p.add_argument("--corr-threshold", type=float, default=None)
    p.add_argument("--alpha-corr", type=float, default=None)

    p = sub.add_parser("generate", parents=[common], help="sample a synthetic dataset from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--output", default="synthetic.csv")
    p.add_argument("--profiles-out", default=None)
    p.add_argument("--dt", type=float, default=None)

    p = sub.add_parser("validate", parents=[common], help="compare synthetic output against the raw dataset")
    p.add_argument("--raw", required=True)
    p.add_argument("--synthetic", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--output", default="report.json")

    p = sub.add_parser("bootstrap", parents=[common], help="subsampling robustness study")
    p.add_argument("--input", required=True)
    p.add_argument("--fractions", default="0.9,0.8")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--n-synth", type=int, default=1000)
    p.add_argument("--n-perm", type=int, default=None)
    p.add_argument("--output", default="bootstrap.json")

    p = sub.add_parser("pipeline", parents=[common], help="run every stage in order")
    p.add_argument("--input", default=None)
    p.add_argument("--workdir", default=None)
    p.add_argument("--stage", default=None, choices=STAGES)
    return parser


def _apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    mapping = {
        "seed": "seed",
        "penalty": "penalty",
        "nb_max": "n_b_max",
        "d_thd": "d_thd",
        "mass_threshold": "mass_threshold",
        "corr_threshold": "corr_threshold",
        "alpha_corr": "alpha_corr",
        "alpha": "alpha_ks",
        "n": "n_synth",
        "dt": "profile_dt",
        "n_perm": "n_perm",
        "input": "input",
        "workdir": "workdir",
    }
    updates = {}
    for arg_name, cfg_name in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            updates[cfg_name] = value
    return dataclasses.replace(config, **updates) if updates else config


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        config = _apply_overrides(config, args)
        if args.command == "fit":
            stage_fit(config, args.input, args.output, args.counts_out)
        elif args.command == "combine":
            stage_combine(
                config, args.params, args.output, args.counts,
                threshold_quantile=args.d_thd_quantile,
            )
        elif args.command == "model":
            stage_model(config, args.input, args.output)
        elif args.command == "generate":
            stage_generate(config, args.model, args.output, args.profiles_out, args.dt)
        elif args.command == "validate":
            stage_validate(config, args.raw, args.synthetic, args.output)
        elif args.command == "bootstrap":
            dataset = tables.read_combined_csv(args.input)
            fractions = tuple(float(f) for f in args.fractions.split(","))
            report = bootstrap_robustness(
                dataset,
                fractions=fractions,
                reps=args.reps,
                n_synth=args.n_synth,
                alpha=config.alpha_ks,
                seed=config.seed,
                n_perm=args.n_perm or config.n_perm,
                model_cfg=config.model_config(),
            )
            doc = {
                "alpha": report.alpha,
                "reps": report.reps,
                "failures": {str(k): v for k, v in report.failures.items()},
                "proportions": {str(k): v for k, v in report.proportions.items()},
            }
            Path(args.output).write_text(
                json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
        elif args.command == "pipeline":
            run_pipeline(config, stage=args.stage)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except LeadkinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
