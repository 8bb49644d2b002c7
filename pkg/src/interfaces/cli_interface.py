#!/usr/bin/env python3
"""
Command-line interface for the tackle experiment pipeline.
"""

import argparse
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from config.config import (
    EXIT_INVARIANT, EXIT_OK, FOLD_COUNT, SPLIT_SEED, AugmentParams, ExperimentConfig, SynthConfig,
    apply_seed_override,
)
from core.exceptions import InvariantViolation, ManifestError, TackleError
from core.logger import app_logger, configure_logging
from core.pipeline import localize_manifest, run_pipeline
from core.trainer import TrialContext, run_trial, stack_inputs
from core.vivit import load_checkpoint, predict_proba
from interfaces.report_writer import write_design, write_preview_png, write_report
from tools.augmentor import apply_config
from tools.clipstore import load_manifest, localize_clip, read_clip, write_clip
from tools.designer import FactorLevels, build_l18, enumerate_runs, get_run, l18_table, verify_orthogonality
from tools.evaluator import (
    FoldReport, aggregate, best_run, counts_at_threshold, format_mean_sd, select_threshold,
)
from tools.partitioner import (
    FoldAssignment, balance_training, check_leakage, describe_folds, materialize, stratified_kfold,
)
from tools.synthgen import generate
from utils.io_utils import read_json, write_json


def _load_config(path: Optional[str]) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(path) if path else ExperimentConfig()
    return apply_seed_override(cfg)


def _load_folds(path: str) -> FoldAssignment:
    try:
        return FoldAssignment.from_dict(read_json(path))
    except FileNotFoundError as e:
        raise ManifestError(f"Fold file not found: {path}") from e
    except ValueError as e:
        raise ManifestError(f"Fold file {path} is not valid JSON: {e}") from e


def cmd_design(args: argparse.Namespace) -> int:
    array = build_l18()
    print(l18_table(array).to_string(index=False))
    report = verify_orthogonality(array)
    print(f"\n{'✅' if report.passed else '❌'} Pairwise balance: "
          f"{'passed' if report.passed else '; '.join(report.failures)}")
    print(f"📋 Run grid: {', '.join(p.run_id for p in enumerate_runs())}")
    if args.out:
        for path in write_design(Path(args.out)):
            print(f"  • {path}")
    return EXIT_OK if report.passed else EXIT_INVARIANT


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = SynthConfig(
        count=args.count, risky_fraction=args.fraction, seed=args.seed,
        min_frames=args.min_frames, max_frames=args.max_frames,
        height=args.size, width=args.size, blob_radius=args.blob_radius or max(1, min(3, args.size // 8)),
    )
    cfg = apply_seed_override(replace(ExperimentConfig(), synth=cfg)).synth
    cfg.validate()
    manifest = generate(cfg, args.out)
    counts = {k.value: v for k, v in manifest.class_counts.items()}
    print(f"✅ Wrote {manifest.total} clips to {args.out} ({counts})")
    return EXIT_OK


def cmd_localize(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    localized, _ = localize_manifest(manifest, Path(args.out))
    print(f"✅ Localized {localized.total} clips into {args.out}")
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    seed = apply_seed_override(replace(ExperimentConfig(), split_seed=args.seed)).split_seed
    assignment = stratified_kfold(manifest, args.k, seed)
    assignment = FoldAssignment(assignment.folds, assignment.seed, str(Path(args.manifest)))
    write_json(args.out, assignment.to_dict())
    print(describe_folds(assignment, manifest).to_string(index=False))
    print(f"✅ Wrote {args.out}")
    return EXIT_OK


def cmd_materialize(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    manifest = load_manifest(args.manifest)
    assignment = _load_folds(args.folds)
    plan = get_run(args.run)
    folds = [args.fold] if args.fold is not None else list(range(assignment.fold_count))

    training_sets = [balance_training(f, assignment, manifest, plan, cfg.augment, cfg.safe_subset_fraction)
                     for f in folds]
    leakage = check_leakage(assignment, training_sets, manifest)
    if not leakage.passed:
        raise InvariantViolation(f"Leakage check failed: {leakage.summary()}")

    clips = None
    if args.write_clips:
        clips = {e.source_id: localize_clip(read_clip(e.path), e.fpoc) for e in manifest}
    for training in training_sets:
        out = materialize(training, assignment.validation_ids(training.fold), manifest, clips, cfg.augment,
                          Path(args.out) / f"fold{training.fold}", write_clips=args.write_clips)
        print(f"  • fold {training.fold}: {training.size} training clips "
              f"({len(training.synthesized)} synthesized) -> {out.training_manifest}")
    return EXIT_OK


def cmd_augment(args: argparse.Namespace) -> int:
    levels = FactorLevels.parse(args.levels)
    params = AugmentParams(noise_sigma=args.sigma, seed=args.seed)
    params = apply_seed_override(replace(ExperimentConfig(), augment=params)).augment
    params.validate()
    clip = read_clip(args.input)
    augmented = apply_config(clip, levels, params)
    write_clip(args.out, augmented)
    print(f"✅ Applied {levels} to {args.input} -> {args.out}")
    if args.preview:
        frame = min(args.frame, clip.num_frames - 1)
        write_preview_png(clip, augmented, frame, Path(args.preview), title=str(levels))
        print(f"🖼️  Preview written to {args.preview}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    manifest = load_manifest(args.manifest)
    assignment = _load_folds(args.folds)
    plan = get_run(args.run)
    clips = {e.source_id: localize_clip(read_clip(e.path), e.fpoc) for e in manifest}
    context = TrialContext(manifest, assignment, clips, cfg, args.checkpoint_dir)
    report = run_trial(context, plan, args.fold)
    write_json(args.out, report.to_dict())
    metrics = report.metrics
    print(f"✅ {plan.run_id} fold {args.fold}: risky recall {metrics.risky_recall:.3f}, "
          f"macro-F1 {metrics.macro_f1:.3f} (threshold {report.threshold:.3f}) -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    params, model_config = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    clips = [localize_clip(read_clip(e.path), e.fpoc) for e in manifest]
    probs = predict_proba(params, stack_inputs(clips, model_config, str(params["head.weight"].dtype)),
                          model_config)
    is_risky = np.array([e.label.binary.index == 1 for e in manifest])
    if args.threshold is None:
        choice = select_threshold(zip(probs.tolist(), is_risky.tolist()))
        threshold, counts = choice.threshold, choice.counts
    else:
        threshold, counts = args.threshold, counts_at_threshold(probs, is_risky, args.threshold)
    report = FoldReport(run_id=args.run or "evaluate", fold=args.fold, threshold=threshold, counts=counts)
    write_json(args.out, report.to_dict())
    metrics = report.metrics
    print(f"✅ {manifest.total} clips: risky recall {metrics.risky_recall:.3f}, "
          f"safe recall {metrics.safe_recall:.3f}, macro-F1 {metrics.macro_f1:.3f} at {threshold:.3f}")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    overrides = {}
    if args.out:
        overrides["output_dir"] = args.out
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.runs and not args.all:
        overrides["runs"] = tuple(args.runs)
    if args.all:
        overrides["runs"] = ()
    cfg = replace(cfg, **overrides)
    cfg.validate()
    result = run_pipeline(cfg, show_progress=not args.no_progress)
    display_summary(result.summaries)
    print(f"\n✅ Results: {result.results_path}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        document = read_json(args.results)
    except FileNotFoundError as e:
        raise ManifestError(f"Results file not found: {args.results}") from e
    except ValueError as e:
        raise ManifestError(f"Results file {args.results} is not valid JSON: {e}") from e
    reports = [FoldReport.from_dict(r) for r in document.get("reports", [])]
    summaries = aggregate(reports)
    out_dir = Path(args.out) if args.out else Path(args.results).parent / "report"
    for path in write_report(reports, summaries, out_dir, write_svg=not args.no_svg):
        print(f"  • {path}")
    display_summary(summaries)
    return EXIT_OK


def display_summary(summaries) -> None:
    """Print mean±SD of the headline metrics per run."""
    print("\n📊 Mean ± SD over folds")
    print("=" * 60)
    print(f"{'run':<10}{'risky recall':>18}{'risky F1':>16}{'macro F1':>16}")
    for run_id, s in summaries.items():
        if s.folds == 0:
            print(f"{run_id:<10}{'(all folds failed)':>50}")
            continue
        print(f"{run_id:<10}{format_mean_sd(s.mean['risky_recall'], s.sd['risky_recall']):>18}"
              f"{format_mean_sd(s.mean['risky_f1'], s.sd['risky_f1']):>16}"
              f"{format_mean_sd(s.mean['macro_f1'], s.sd['macro_f1']):>16}")
    try:
        print(f"\n🎯 Best run by risky recall: {best_run(summaries)}")
    except TackleError:
        pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tackle",
        description="Risky-tackle detection experiments: L18 augmentation design, "
                    "stratified cross-validation and a numpy video transformer.",
    )
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    parser.add_argument("--log-file", default=None, help="Also write logs to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="Print and verify the L18 schedule")
    p.add_argument("--out", help="Directory for l18.csv, runs.json and orthogonality.json")
    p.set_defaults(handler=cmd_design)

    p = sub.add_parser("synth", help="Generate a synthetic labelled dataset")
    p.add_argument("--count", type=int, default=400)
    p.add_argument("--fraction", type=float, default=0.353, help="Risky fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-frames", type=int, default=40)
    p.add_argument("--max-frames", type=int, default=120)
    p.add_argument("--size", type=int, default=32, help="Frame height and width")
    p.add_argument("--blob-radius", type=int, default=None, help="Disc radius (default: min(3, size/8))")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("localize", help="Cut every clip to its 32-frame FPOC window")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_localize)

    p = sub.add_parser("split", help="Stratified k-fold assignment")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=FOLD_COUNT)
    p.add_argument("--seed", type=int, default=SPLIT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("materialize", help="Write balanced training/validation sub-manifests for a run")
    p.add_argument("--manifest", required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--run", required=True, help="RunOrig, Run0 or R1..R18")
    p.add_argument("--fold", type=int, default=None, help="Only this fold")
    p.add_argument("--config", default=None)
    p.add_argument("--write-clips", action="store_true", help="Also write synthesized clip files")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_materialize)

    p = sub.add_parser("augment", help="Apply one factor combination to a clip")
    p.add_argument("--levels", required=True, help="NOISE,BRIGHTNESS,ROTATION,FLIP")
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preview", default=None, help="PNG with original and augmented frame")
    p.add_argument("--frame", type=int, default=15, help="Frame shown in the preview")
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("train", help="Train and evaluate one (run, fold) trial")
    p.add_argument("--manifest", required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint-dir", default=None, help="Save the best parameters under this directory")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="Score a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=None, help="Fixed threshold instead of the sweep")
    p.add_argument("--run", default=None)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("experiment", help="Run the full pipeline from a config file")
    p.add_argument("--config", default=None)
    p.add_argument("--all", action="store_true", help="All 20 runs, ignoring the config's run filter")
    p.add_argument("--runs", nargs="+", default=None)
    p.add_argument("--out", default=None, help="Output directory (overrides the config)")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--no-progress", action="store_true")
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("report", help="Rebuild report files from a consolidated results JSON")
    p.add_argument("--results", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(handler=cmd_report)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run one subcommand and map errors to exit codes.

    Returns:
        0 on success, otherwise the exit code carried by the error
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_file)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except TackleError as e:
        app_logger.error(str(e))
        print(f"❌ {e}")
        return e.exit_code
    except KeyboardInterrupt:
        print("\n👋 Interrupted")
        return EXIT_INVARIANT
    except Exception as e:
        app_logger.exception("Unexpected error")
        print(f"❌ Unexpected error: {e}")
        return EXIT_INVARIANT
