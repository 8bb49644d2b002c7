#!/usr/bin/env python3
"""
End-to-end experiment: design, data, localize, split, materialize, train, report.

Every stage writes into the config-hash addressed artifact directory and
leaves a marker recording that hash. A stage whose marker matches is
reused; anything else is rebuilt.
"""

import platform
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional

import numpy as np

from config.config import CLIP_LENGTH, FRAMES_BEFORE_FPOC, ExperimentConfig
from core.exceptions import DataError, InvariantViolation, StageError, TackleError
from core.logger import app_logger
from core.trainer import TrialContext, run_grid
from interfaces.report_writer import write_design, write_report
from src import __package_info__, __version__
from tools.clipstore import (
    Clip, DatasetManifest, FpocAnnotation, ManifestEntry, load_manifest, localize_clip,
    read_clip, write_clip, write_manifest,
)
from tools.designer import RunPlan, build_l18, select_runs, verify_orthogonality
from tools.evaluator import FoldReport, RunSummary, aggregate, best_run, best_run_per_metric
from tools.partitioner import (
    FoldAssignment, balance_training, check_leakage, describe_folds, materialize, stratified_kfold,
)
from tools.synthgen import generate
from utils.io_utils import read_json, write_json

MARKER_NAME = ".stage.json"
RESULTS_NAME = "results.json"


@contextmanager
def stage(name: str, trial: Optional[str] = None) -> Iterator[None]:
    """Wrap a stage so that any failure surfaces as a StageError naming it."""
    app_logger.info(f"Stage {name} started")
    try:
        yield
    except StageError:
        raise
    except TackleError as e:
        raise StageError(name, e, trial) from e
    except OSError as e:
        raise StageError(name, DataError(f"{type(e).__name__}: {e}"), trial) from e
    app_logger.info(f"Stage {name} finished")


def _marker_matches(stage_dir: Path, config_hash: str) -> bool:
    marker = stage_dir / MARKER_NAME
    if not marker.is_file():
        return False
    try:
        return read_json(marker).get("config_hash") == config_hash
    except ValueError:
        return False


def _write_marker(stage_dir: Path, name: str, config_hash: str) -> None:
    write_json(stage_dir / MARKER_NAME, {"stage": name, "config_hash": config_hash})


def provenance(cfg: ExperimentConfig) -> dict[str, Any]:
    """Everything needed to re-run any single trial in isolation."""
    return {
        "tool": __package_info__["name"],
        "tool_version": __version__,
        "config_hash": cfg.config_hash(),
        "seeds": cfg.seeds(),
        "config": {k: v for k, v in cfg.to_dict().items() if k not in cfg.UNHASHED},
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
    }


def localize_manifest(manifest: DatasetManifest, out_dir: Path) -> tuple[DatasetManifest, dict[str, Clip]]:
    """Cut every clip to its FPOC window; the result has fpoc 15 in every entry."""
    clip_dir = out_dir / "clips"
    entries, clips = [], {}
    for entry in manifest:
        clip = localize_clip(read_clip(entry.path), entry.fpoc)
        path = (clip_dir / f"{entry.source_id}.tckl").resolve()
        write_clip(path, clip)
        entries.append(ManifestEntry(path, entry.label, FpocAnnotation(FRAMES_BEFORE_FPOC), entry.source_id))
        clips[entry.source_id] = clip
    localized = DatasetManifest(tuple(entries))
    write_manifest(localized, out_dir / "manifest.json")
    return localized, clips


@dataclass
class PipelineResult:
    artifact_dir: Path
    results_path: Path
    reports: list[FoldReport] = field(default_factory=list)
    summaries: dict[str, RunSummary] = field(default_factory=dict)
    best_run: Optional[str] = None


class ExperimentPipeline:
    """Runs the stages of one experiment config in order."""

    def __init__(self, cfg: ExperimentConfig, show_progress: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.config_hash = cfg.config_hash()
        self.root = cfg.artifact_dir
        self.show_progress = show_progress
        self.plans: list[RunPlan] = []

    def _stage_dir(self, name: str) -> Path:
        path = self.root / name
        path.mkdir(parents=True, exist_ok=True)
        return path

    def run(self) -> PipelineResult:
        self.root.mkdir(parents=True, exist_ok=True)
        write_json(self.root / "config.json", self.cfg.to_dict())
        app_logger.info(f"Experiment {self.config_hash[:12]} in {self.root}")

        self.design()
        manifest = self.ingest()
        localized, clips = self.localize(manifest)
        assignment = self.split(localized)
        self.materialize(localized, assignment, clips)
        reports, errors = self.train(localized, assignment, clips)
        return self.report(reports, errors, assignment, localized)

    def design(self) -> None:
        with stage("design"):
            self.plans = select_runs(self.cfg.runs)
            report = verify_orthogonality(build_l18())
            if not report.passed:
                raise InvariantViolation(f"L18 schedule is not balanced: {'; '.join(report.failures)}")
            stage_dir = self._stage_dir("design")
            if not _marker_matches(stage_dir, self.config_hash):
                write_design(stage_dir)
                _write_marker(stage_dir, "design", self.config_hash)

    def ingest(self) -> DatasetManifest:
        with stage("data"):
            if self.cfg.manifest_path is not None:
                return load_manifest(self.cfg.manifest_path)
            stage_dir = self._stage_dir("data")
            if _marker_matches(stage_dir, self.config_hash):
                app_logger.info("Reusing synthetic dataset")
                return load_manifest(stage_dir / "manifest.json")
            manifest = generate(self.cfg.synth, stage_dir)
            _write_marker(stage_dir, "data", self.config_hash)
            return manifest

    def localize(self, manifest: DatasetManifest) -> tuple[DatasetManifest, dict[str, Clip]]:
        with stage("localize"):
            stage_dir = self._stage_dir("localized")
            if _marker_matches(stage_dir, self.config_hash):
                localized = load_manifest(stage_dir / "manifest.json")
                clips = {e.source_id: read_clip(e.path) for e in localized}
                if all(c.num_frames == CLIP_LENGTH for c in clips.values()):
                    return localized, clips
            localized, clips = localize_manifest(manifest, stage_dir)
            _write_marker(stage_dir, "localize", self.config_hash)
            return localized, clips

    def split(self, manifest: DatasetManifest) -> FoldAssignment:
        with stage("split"):
            stage_dir = self._stage_dir("split")
            folds_path = stage_dir / "folds.json"
            if _marker_matches(stage_dir, self.config_hash):
                return FoldAssignment.from_dict(read_json(folds_path))
            assignment = stratified_kfold(manifest, self.cfg.fold_count, self.cfg.split_seed)
            assignment = FoldAssignment(assignment.folds, assignment.seed,
                                        str(stage_dir.parent / "localized" / "manifest.json"))
            write_json(folds_path, assignment.to_dict())
            (stage_dir / "folds.csv").write_text(describe_folds(assignment, manifest).to_csv(index=False))
            _write_marker(stage_dir, "split", self.config_hash)
            return assignment

    def materialize(self, manifest: DatasetManifest, assignment: FoldAssignment,
                    clips: dict[str, Clip]) -> None:
        with stage("materialize"):
            training_sets = [
                balance_training(fold, assignment, manifest, plan, self.cfg.augment,
                                 self.cfg.safe_subset_fraction)
                for plan in self.plans for fold in range(assignment.fold_count)
            ]
            leakage = check_leakage(assignment, training_sets, manifest)
            stage_dir = self._stage_dir("trials")
            write_json(stage_dir / "leakage.json", leakage.to_dict())
            if not leakage.passed:
                raise InvariantViolation(f"Leakage check failed: {leakage.summary()}")
            if _marker_matches(stage_dir, self.config_hash):
                return
            for training in training_sets:
                materialize(
                    training, assignment.validation_ids(training.fold), manifest, clips,
                    self.cfg.augment, stage_dir / training.run_id / f"fold{training.fold}",
                    write_clips=self.cfg.materialize_clips,
                )
            _write_marker(stage_dir, "materialize", self.config_hash)

    def train(self, manifest: DatasetManifest, assignment: FoldAssignment,
              clips: dict[str, Clip]) -> tuple[list[FoldReport], list]:
        with stage("train"):
            checkpoint_dir = str(self._stage_dir("checkpoints")) if self.cfg.save_checkpoints else None
            context = TrialContext(manifest, assignment, clips, self.cfg, checkpoint_dir)
            grid = run_grid(context, self.plans, jobs=self.cfg.jobs, show_progress=self.show_progress)
            return grid.reports, grid.errors

    def report(self, reports: list[FoldReport], errors: list, assignment: FoldAssignment,
               manifest: DatasetManifest) -> PipelineResult:
        with stage("report"):
            summaries = aggregate(reports)
            results = results_document(self.cfg, reports, summaries, assignment, manifest)
            results_path = self.root / RESULTS_NAME
            write_json(results_path, results)
            write_report(reports, summaries, self.root / "report", write_svg=self.cfg.write_svg)

        if errors:
            run_id, fold, error = errors[0]
            app_logger.error(f"{len(errors)} trial(s) failed; first: {run_id} fold {fold}: {error}")
            raise StageError("train", error, trial=f"{run_id}/fold{fold}")
        return PipelineResult(self.root, results_path, reports, summaries, results.get("best_run"))


def results_document(cfg: ExperimentConfig, reports: list[FoldReport], summaries: dict[str, RunSummary],
                     assignment: FoldAssignment, manifest: DatasetManifest) -> dict[str, Any]:
    """Consolidated results; contains no timestamps, so reruns are byte-identical."""
    try:
        top: Optional[str] = best_run(summaries)
    except TackleError:
        top = None
    return {
        "provenance": provenance(cfg),
        "folds": describe_folds(assignment, manifest).to_dict(orient="records"),
        "reports": [r.to_dict() for r in reports],
        "summaries": {run_id: s.to_dict() for run_id, s in summaries.items()},
        "best_run": top,
        "best_run_per_metric": best_run_per_metric(summaries),
    }


def run_pipeline(cfg: ExperimentConfig, show_progress: bool = True) -> PipelineResult:
    """
    Run a full experiment and write its consolidated results.

    Raises:
        StageError: naming the failing stage (and trial) and wrapping the cause
    """
    return ExperimentPipeline(cfg, show_progress=show_progress).run()
