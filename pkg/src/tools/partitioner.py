#!/usr/bin/env python3
"""
Stratified fold assignment, post-split balancing and leakage checks.

Validation folds are fixed once per split seed and never touched by any
balancing mode. Balancing only ever draws parents from a fold's training
originals.
"""

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.model_selection import StratifiedKFold

from config.config import AugmentParams, FOLD_COUNT, SAFE_SUBSET_FRACTION, SPLIT_SEED
from core.exceptions import BalancingError, ManifestError, StratificationError
from core.logger import data_logger
from tools.augmentor import apply_config
from tools.clipstore import BinaryLabel, Clip, DatasetManifest, ManifestEntry, write_clip
from tools.designer import Balancing, FactorLevels, RunPlan
from utils.io_utils import write_json
from utils.rng_utils import derive_rng


@dataclass(frozen=True)
class FoldAssignment:
    """Validation ids per fold; fold i trains on every other fold."""
    folds: tuple[tuple[str, ...], ...]
    seed: int = SPLIT_SEED
    manifest_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "folds", tuple(tuple(f) for f in self.folds))

    @property
    def fold_count(self) -> int:
        return len(self.folds)

    @property
    def assignment(self) -> dict[str, int]:
        """source_id -> fold index (the last fold wins if an id is listed twice)."""
        return {sid: i for i, ids in enumerate(self.folds) for sid in ids}

    def fold_of(self, source_id: str) -> int:
        try:
            return self.assignment[source_id]
        except KeyError as e:
            raise ManifestError(f"{source_id!r} is not assigned to any fold") from e

    def validation_ids(self, fold: int) -> tuple[str, ...]:
        if not 0 <= fold < self.fold_count:
            raise ManifestError(f"Fold {fold} outside 0..{self.fold_count - 1}")
        return self.folds[fold]

    def training_ids(self, fold: int, manifest: DatasetManifest) -> list[str]:
        """Training originals of a fold, in manifest order."""
        held_out = set(self.validation_ids(fold))
        return [sid for sid in manifest.source_ids if sid not in held_out]

    def to_dict(self) -> dict[str, Any]:
        return {
            "fold_count": self.fold_count,
            "seed": self.seed,
            "manifest": self.manifest_path,
            "folds": [list(ids) for ids in self.folds],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FoldAssignment":
        try:
            folds = data["folds"]
            seed = int(data.get("seed", SPLIT_SEED))
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"Malformed fold assignment: {e}") from e
        if "fold_count" in data and data["fold_count"] != len(folds):
            raise ManifestError(
                f"Fold assignment declares {data['fold_count']} folds but lists {len(folds)}"
            )
        return cls(folds=tuple(tuple(str(s) for s in ids) for ids in folds),
                   seed=seed, manifest_path=data.get("manifest"))


def stratified_kfold(manifest: DatasetManifest, k: int = FOLD_COUNT,
                     seed: int = SPLIT_SEED) -> FoldAssignment:
    """
    Assign every clip to one of k validation folds, preserving the class ratio.

    Args:
        manifest: Dataset to split
        k: Number of folds
        seed: Shuffle seed

    Returns:
        FoldAssignment with fold sizes differing by at most one

    Raises:
        StratificationError: if a present class has fewer than k members
    """
    if k < 2:
        raise StratificationError("all", manifest.total, k)
    if manifest.total == 0:
        raise ManifestError("Cannot split an empty manifest")
    for label, members in manifest.class_counts.items():
        if members < k:
            raise StratificationError(label.value, members, k)

    ids = manifest.source_ids
    labels = manifest.labels()
    y = np.array([labels[sid].index for sid in ids])
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)

    folds = []
    for _, test_idx in splitter.split(np.zeros(len(ids)), y):
        folds.append(tuple(ids[i] for i in sorted(test_idx)))

    assignment = FoldAssignment(folds=tuple(folds), seed=seed)
    data_logger.info(
        f"Split {manifest.total} clips into {k} folds of sizes {[len(f) for f in folds]} (seed {seed})"
    )
    return assignment


def describe_folds(assignment: FoldAssignment, manifest: DatasetManifest) -> pd.DataFrame:
    """Per validation fold: size, class counts and risky percentage."""
    labels = manifest.labels()
    rows = []
    for fold, ids in enumerate(assignment.folds):
        tally = Counter(labels[sid] for sid in ids)
        size = len(ids)
        risky = tally[BinaryLabel.RISKY]
        rows.append({
            "fold": fold,
            "size": size,
            "risky": risky,
            "safe": tally[BinaryLabel.SAFE],
            "risky_pct": 100.0 * risky / size if size else 0.0,
        })
    return pd.DataFrame(rows, columns=["fold", "size", "risky", "safe", "risky_pct"])


@dataclass(frozen=True)
class SynthesizedClip:
    """A training-only clip derived from a risky training original.

    levels is None for a plain duplicate.
    """
    new_id: str
    parent_id: str
    levels: Optional[FactorLevels] = None

    @property
    def is_duplicate(self) -> bool:
        return self.levels is None

    def to_dict(self) -> dict[str, Any]:
        return {
            "new_id": self.new_id,
            "parent_id": self.parent_id,
            "levels": self.levels.to_dict() if self.levels is not None else "Duplicate",
        }


@dataclass(frozen=True)
class TrainingSet:
    """Originals plus synthesized clips for one (run, fold) trial."""
    run_id: str
    fold: int
    originals: tuple[str, ...]
    synthesized: tuple[SynthesizedClip, ...] = ()
    # Safe originals that are used in augmented form instead of as-is
    replaced: tuple[str, ...] = ()
    levels: Optional[FactorLevels] = None

    @property
    def size(self) -> int:
        return len(self.originals) + len(self.synthesized)

    def class_counts(self, manifest: DatasetManifest) -> dict[BinaryLabel, int]:
        labels = manifest.labels()
        tally = Counter(labels[sid] for sid in self.originals)
        tally.update(labels[s.parent_id] for s in self.synthesized)
        return {label: tally[label] for label in BinaryLabel}

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "fold": self.fold,
            "originals": list(self.originals),
            "synthesized": [s.to_dict() for s in self.synthesized],
            "replaced": list(self.replaced),
            "levels": self.levels.to_dict() if self.levels is not None else None,
        }


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def balance_training(fold: int, assignment: FoldAssignment, manifest: DatasetManifest,
                     plan: RunPlan, params: AugmentParams,
                     safe_subset_fraction: float = SAFE_SUBSET_FRACTION) -> TrainingSet:
    """
    Build the training set of one fold under a run's balancing mode.

    N_aug = safe training originals - risky training originals. Parents are
    sampled with replacement from the risky training pool. Under
    AugmentToBalance a fixed fraction of the safe originals is additionally
    replaced by its augmented version.

    Raises:
        BalancingError: if synthesis is required but the risky pool is empty
    """
    originals = assignment.training_ids(fold, manifest)
    labels = manifest.labels()
    risky = [sid for sid in originals if labels[sid] is BinaryLabel.RISKY]
    safe = [sid for sid in originals if labels[sid] is BinaryLabel.SAFE]

    if plan.balancing is Balancing.NO_BALANCING:
        return TrainingSet(plan.run_id, fold, tuple(originals))

    n_aug = len(safe) - len(risky)
    if n_aug <= 0:
        data_logger.warning(
            f"{plan.run_id} fold {fold}: risky class is not the minority ({len(risky)} vs {len(safe)}), "
            "nothing to synthesize"
        )
        n_aug = 0
    if n_aug and not risky:
        raise BalancingError(f"{plan.run_id} fold {fold}: no risky training clips to balance from")

    rng = derive_rng(params.seed, plan.run_id, fold, "balance")
    parent_idx = rng.integers(0, len(risky), size=n_aug) if n_aug else np.array([], dtype=int)
    duplicate = plan.balancing is Balancing.DUPLICATE_ONLY
    tag = "dup" if duplicate else "aug"
    synthesized = tuple(
        SynthesizedClip(
            new_id=f"{plan.run_id}-f{fold}-{tag}{i:04d}-{risky[j]}",
            parent_id=risky[j],
            levels=None if duplicate else plan.levels,
        )
        for i, j in enumerate(parent_idx)
    )

    replaced: tuple[str, ...] = ()
    if not duplicate and safe and safe_subset_fraction > 0:
        subset_rng = derive_rng(params.seed, plan.run_id, fold, "safe-subset")
        n_replace = min(len(safe), _round_half_up(safe_subset_fraction * len(safe)))
        chosen = set(subset_rng.choice(len(safe), size=n_replace, replace=False).tolist())
        replaced = tuple(sid for i, sid in enumerate(safe) if i in chosen)

    training = TrainingSet(
        run_id=plan.run_id,
        fold=fold,
        originals=tuple(originals),
        synthesized=synthesized,
        replaced=replaced,
        levels=plan.levels,
    )
    data_logger.debug(
        f"{plan.run_id} fold {fold}: {len(originals)} originals, {len(synthesized)} synthesized, "
        f"{len(replaced)} safe replaced"
    )
    return training


@dataclass
class LeakageReport:
    """Outcome of the leakage check; passed is False when any list is non-empty."""
    passed: bool
    parent_in_validation: list[tuple[int, str, str]] = field(default_factory=list)
    original_in_validation: list[tuple[int, str]] = field(default_factory=list)
    duplicate_validation: list[tuple[str, list[int]]] = field(default_factory=list)
    unassigned: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "parent_in_validation": [list(v) for v in self.parent_in_validation],
            "original_in_validation": [list(v) for v in self.original_in_validation],
            "duplicate_validation": [[sid, folds] for sid, folds in self.duplicate_validation],
            "unassigned": list(self.unassigned),
        }

    def summary(self) -> str:
        if self.passed:
            return "no leakage"
        parts = []
        if self.parent_in_validation:
            fold, new_id, parent = self.parent_in_validation[0]
            parts.append(f"{len(self.parent_in_validation)} synthesized clip(s) with validation parents "
                         f"(e.g. {new_id} <- {parent} in fold {fold})")
        if self.original_in_validation:
            parts.append(f"{len(self.original_in_validation)} training original(s) in validation")
        if self.duplicate_validation:
            parts.append(f"{len(self.duplicate_validation)} id(s) in several validation folds")
        if self.unassigned:
            parts.append(f"{len(self.unassigned)} id(s) in no validation fold")
        return "; ".join(parts)


def check_leakage(assignment: FoldAssignment, training_sets: Sequence[TrainingSet],
                  manifest: Optional[DatasetManifest] = None) -> LeakageReport:
    """
    Verify that no validation clip reaches training and that folds partition the data.

    Never raises; inspect the returned report.
    """
    membership: dict[str, list[int]] = {}
    for fold, ids in enumerate(assignment.folds):
        for sid in ids:
            membership.setdefault(sid, []).append(fold)
    duplicates = sorted((sid, folds) for sid, folds in membership.items() if len(folds) > 1)

    unassigned = []
    if manifest is not None:
        unassigned = [sid for sid in manifest.source_ids if sid not in membership]

    parent_hits = []
    original_hits = []
    for ts in training_sets:
        held_out = set(assignment.folds[ts.fold]) if 0 <= ts.fold < assignment.fold_count else set()
        for sid in list(ts.originals) + list(ts.replaced):
            if sid in held_out:
                original_hits.append((ts.fold, sid))
        for synth in ts.synthesized:
            if synth.parent_id in held_out:
                parent_hits.append((ts.fold, synth.new_id, synth.parent_id))

    passed = not (duplicates or unassigned or parent_hits or original_hits)
    return LeakageReport(
        passed=passed,
        parent_in_validation=parent_hits,
        original_in_validation=original_hits,
        duplicate_validation=duplicates,
        unassigned=unassigned,
    )


@dataclass(frozen=True)
class TrainingClip:
    source_id: str
    clip: Clip
    label: BinaryLabel


def build_training_clips(training: TrainingSet, clips: Mapping[str, Clip],
                         manifest: DatasetManifest, params: AugmentParams) -> list[TrainingClip]:
    """
    Realize a training set as clips: originals first, then synthesized clips.

    Each augmented clip draws its noise from a stream keyed by
    (seed, run_id, fold, clip id), so the result does not depend on order.
    """
    labels = manifest.labels()
    replaced = set(training.replaced)
    out = []
    for sid in training.originals:
        clip = clips[sid]
        if sid in replaced:
            rng = derive_rng(params.seed, training.run_id, training.fold, sid)
            clip = apply_config(clip, training.levels, params, rng=rng)
        out.append(TrainingClip(sid, clip, labels[sid]))
    for synth in training.synthesized:
        parent = clips[synth.parent_id]
        if synth.is_duplicate:
            clip = parent
        else:
            rng = derive_rng(params.seed, training.run_id, training.fold, synth.new_id)
            clip = apply_config(parent, synth.levels, params, rng=rng)
        out.append(TrainingClip(synth.new_id, clip, labels[synth.parent_id]))
    return out


@dataclass(frozen=True)
class MaterializedFold:
    training_manifest: Path
    validation_manifest: Path
    clips_written: int


def materialize(training: TrainingSet, validation_ids: Sequence[str], manifest: DatasetManifest,
                clips: Optional[Mapping[str, Clip]], params: AugmentParams, out_dir: Path,
                write_clips: bool = False) -> MaterializedFold:
    """
    Write training/validation sub-manifests for one trial.

    Synthesized records carry their parent and factor levels. Their clip
    files are written only when write_clips is set; otherwise the record
    points at the parent's file, which together with the levels and the
    seed reproduces the clip.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_dir = out_dir.resolve()
    clip_dir = out_dir / "clips"

    built: dict[str, Clip] = {}
    if write_clips:
        if clips is None:
            raise ManifestError("Clips are required to write synthesized clip files")
        kept_as_is = set(training.originals) - set(training.replaced)
        kept_as_is.update(s.new_id for s in training.synthesized if s.is_duplicate)
        built = {
            tc.source_id: tc.clip
            for tc in build_training_clips(training, clips, manifest, params)
            if tc.source_id not in kept_as_is
        }

    def record(entry: ManifestEntry, source_id: str, extra: dict) -> dict:
        path = entry.path.resolve()
        if source_id in built:
            path = (clip_dir / f"{source_id}.tckl").resolve()
            write_clip(path, built[source_id])
        data = ManifestEntry(path, entry.label, entry.fpoc, source_id).to_dict(base_dir)
        data.update(extra)
        return data

    replaced = set(training.replaced)
    levels = training.levels.to_dict() if training.levels is not None else None
    train_records = []
    for sid in training.originals:
        extra = {"levels": levels, "augmented_in_place": True} if sid in replaced else {}
        train_records.append(record(manifest.entry(sid), sid, extra))
    for synth in training.synthesized:
        extra = {
            "parent_id": synth.parent_id,
            "levels": synth.levels.to_dict() if synth.levels is not None else "Duplicate",
        }
        train_records.append(record(manifest.entry(synth.parent_id), synth.new_id, extra))

    validation_records = [
        ManifestEntry(manifest.entry(sid).path.resolve(), manifest.entry(sid).label,
                      manifest.entry(sid).fpoc, sid).to_dict(base_dir)
        for sid in validation_ids
    ]

    training_path = out_dir / "train.json"
    validation_path = out_dir / "validation.json"
    write_json(training_path, train_records)
    write_json(validation_path, validation_records)
    return MaterializedFold(training_path, validation_path, len(built))
