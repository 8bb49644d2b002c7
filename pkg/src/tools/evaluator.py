#!/usr/bin/env python3
"""
Confusion-matrix metrics, threshold selection and fold aggregation.

Risky is the positive class. A sample is predicted risky when its risky
probability is >= the threshold. Any 0/0 ratio evaluates to 0.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from core.exceptions import (
    ConfigurationError, EmptyEvaluationError, EvaluationError, NormalizationError,
)
from tools.clipstore import BinaryLabel
from tools.designer import run_order

MetricFn = Callable[[int, int, int, int], float]
METRIC_REGISTRY: dict[str, MetricFn] = {}


def register_metric(name: str):
    """Decorator adding a (tp, tn, fp, fn) -> float metric to the registry."""
    def decorator(fn: MetricFn) -> MetricFn:
        METRIC_REGISTRY[name] = fn
        return fn
    return decorator


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


@register_metric("accuracy")
def accuracy(tp: int, tn: int, fp: int, fn: int) -> float:
    return _ratio(tp + tn, tp + tn + fp + fn)


@register_metric("risky_precision")
def risky_precision(tp: int, tn: int, fp: int, fn: int) -> float:
    return _ratio(tp, tp + fp)


@register_metric("risky_recall")
def risky_recall(tp: int, tn: int, fp: int, fn: int) -> float:
    return _ratio(tp, tp + fn)


@register_metric("risky_f1")
def risky_f1(tp: int, tn: int, fp: int, fn: int) -> float:
    return _ratio(2 * tp, 2 * tp + fp + fn)


@register_metric("safe_recall")
def safe_recall(tp: int, tn: int, fp: int, fn: int) -> float:
    return _ratio(tn, tn + fp)


@register_metric("macro_f1")
def macro_f1(tp: int, tn: int, fp: int, fn: int) -> float:
    safe_f1 = _ratio(2 * tn, 2 * tn + fn + fp)
    return 0.5 * (risky_f1(tp, tn, fp, fn) + safe_f1)


METRIC_NAMES: tuple[str, ...] = tuple(METRIC_REGISTRY)

METRIC_LABELS = {
    "accuracy": "Accuracy",
    "risky_precision": "Risky precision",
    "risky_recall": "Risky recall",
    "risky_f1": "Risky F1",
    "safe_recall": "Safe recall",
    "macro_f1": "Macro F1",
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise EvaluationError(f"Confusion count {name}={value} must be a nonnegative integer")
            object.__setattr__(self, name, int(value))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def risky_total(self) -> int:
        return self.tp + self.fn

    @property
    def safe_total(self) -> int:
        return self.tn + self.fp

    @classmethod
    def from_predictions(cls, is_risky: Sequence[bool], predicted_risky: Sequence[bool]) -> "ConfusionCounts":
        truth = np.asarray(is_risky, dtype=bool)
        pred = np.asarray(predicted_risky, dtype=bool)
        return cls(
            tp=int(np.sum(truth & pred)),
            fp=int(np.sum(~truth & pred)),
            tn=int(np.sum(~truth & ~pred)),
            fn=int(np.sum(truth & ~pred)),
        )

    def to_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    risky_precision: float
    risky_recall: float
    risky_f1: float
    safe_recall: float
    macro_f1: float

    def to_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def compute_metrics(counts: ConfusionCounts) -> Metrics:
    """
    Every registered metric from one confusion matrix.

    Raises:
        EmptyEvaluationError: if the matrix holds no samples
    """
    if counts.total == 0:
        raise EmptyEvaluationError("Cannot compute metrics over zero samples")
    args = (counts.tp, counts.tn, counts.fp, counts.fn)
    return Metrics(**{name: float(fn(*args)) for name, fn in METRIC_REGISTRY.items()})


LabelLike = Union[BinaryLabel, str, int, bool]


def _is_risky(label: LabelLike) -> bool:
    if isinstance(label, BinaryLabel):
        return label is BinaryLabel.RISKY
    if isinstance(label, str):
        return BinaryLabel(label) is BinaryLabel.RISKY
    return bool(label)


@dataclass(frozen=True)
class ThresholdChoice:
    threshold: float
    counts: ConfusionCounts
    macro_f1: float


def threshold_candidates(probabilities: Sequence[float]) -> np.ndarray:
    """0, the midpoints between consecutive distinct sorted probabilities, and 1."""
    distinct = np.unique(np.asarray(probabilities, dtype=np.float64))
    midpoints = (distinct[:-1] + distinct[1:]) / 2.0
    return np.unique(np.concatenate([[0.0], midpoints, [1.0]]))


def counts_at_threshold(probabilities: Sequence[float], is_risky: Sequence[bool],
                        threshold: float) -> ConfusionCounts:
    probs = np.asarray(probabilities, dtype=np.float64)
    return ConfusionCounts.from_predictions(is_risky, probs >= threshold)


def select_threshold(scores: Iterable[tuple[float, LabelLike]]) -> ThresholdChoice:
    """
    Sweep candidate thresholds and keep the one maximizing macro-F1.

    Ties go to the smallest threshold, which favours risky recall.

    Args:
        scores: (risky probability, true label) pairs

    Returns:
        ThresholdChoice with the threshold and the confusion counts it produces
    """
    pairs = list(scores)
    if not pairs:
        raise EmptyEvaluationError("Cannot select a threshold without scores")
    probs = np.array([p for p, _ in pairs], dtype=np.float64)
    truth = np.array([_is_risky(y) for _, y in pairs], dtype=bool)

    candidates = threshold_candidates(probs)
    pred = probs[None, :] >= candidates[:, None]
    tp = np.sum(pred & truth, axis=1)
    fp = np.sum(pred & ~truth, axis=1)
    fn = np.sum(~pred & truth, axis=1)
    tn = np.sum(~pred & ~truth, axis=1)
    scores_f1 = [macro_f1(*map(int, row)) for row in zip(tp, tn, fp, fn)]

    best = 0
    for i, value in enumerate(scores_f1):
        if value > scores_f1[best]:
            best = i
    counts = ConfusionCounts(tp=int(tp[best]), fp=int(fp[best]), tn=int(tn[best]), fn=int(fn[best]))
    return ThresholdChoice(float(candidates[best]), counts, float(scores_f1[best]))


@dataclass
class FoldReport:
    """Outcome of one (run, fold) trial; failed trials carry an error and no counts."""
    run_id: str
    fold: int
    threshold: Optional[float] = None
    counts: Optional[ConfusionCounts] = None
    training_size: int = 0
    synthesized_count: int = 0
    best_epoch: Optional[int] = None
    epochs_run: int = 0
    error: Optional[str] = None
    error_type: Optional[str] = None
    history: list[dict[str, Any]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.error is None and self.counts is not None

    @property
    def metrics(self) -> Optional[Metrics]:
        return compute_metrics(self.counts) if self.counts is not None else None

    def to_dict(self) -> dict[str, Any]:
        metrics = self.metrics
        return {
            "run_id": self.run_id,
            "fold": self.fold,
            "threshold": self.threshold,
            "counts": self.counts.to_dict() if self.counts is not None else None,
            "metrics": metrics.to_dict() if metrics is not None else None,
            "training_size": self.training_size,
            "synthesized_count": self.synthesized_count,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "error": self.error,
            "error_type": self.error_type,
            "history": [dict(h) for h in self.history],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FoldReport":
        counts = data.get("counts")
        return cls(
            run_id=data["run_id"],
            fold=int(data["fold"]),
            threshold=data.get("threshold"),
            counts=ConfusionCounts(**counts) if counts else None,
            training_size=int(data.get("training_size", 0)),
            synthesized_count=int(data.get("synthesized_count", 0)),
            best_epoch=data.get("best_epoch"),
            epochs_run=int(data.get("epochs_run", 0)),
            error=data.get("error"),
            error_type=data.get("error_type"),
            history=list(data.get("history") or []),
        )


def sort_reports(reports: Iterable[FoldReport]) -> list[FoldReport]:
    """Canonical (run, fold) order."""
    return sorted(reports, key=lambda r: (_order_key(r.run_id), r.fold))


def _order_key(run_id: str) -> tuple[int, str]:
    try:
        return (run_order(run_id), "")
    except ConfigurationError:
        return (10 ** 6, run_id)


@dataclass
class RunSummary:
    """Mean and population SD of every metric over a run's successful folds."""
    run_id: str
    folds: int
    mean: dict[str, float] = field(default_factory=dict)
    sd: dict[str, float] = field(default_factory=dict)
    failed_folds: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "folds": self.folds,
            "failed_folds": self.failed_folds,
            "mean": dict(self.mean),
            "sd": dict(self.sd),
        }


def aggregate(reports: Iterable[FoldReport]) -> dict[str, RunSummary]:
    """
    Group fold reports by run and summarize each metric.

    Returns:
        run_id -> RunSummary, in canonical run order; runs whose folds all
        failed are summarized with folds=0 and empty statistics
    """
    grouped: dict[str, list[FoldReport]] = {}
    for report in sort_reports(reports):
        grouped.setdefault(report.run_id, []).append(report)

    summaries = {}
    for run_id, run_reports in grouped.items():
        good = [r.metrics.to_dict() for r in run_reports if r.ok]
        summary = RunSummary(run_id=run_id, folds=len(good), failed_folds=len(run_reports) - len(good))
        if good:
            table = pd.DataFrame(good, columns=list(METRIC_NAMES))
            summary.mean = {m: float(table[m].mean()) for m in METRIC_NAMES}
            summary.sd = {m: float(table[m].std(ddof=0)) for m in METRIC_NAMES}
        summaries[run_id] = summary
    return summaries


def best_run(summaries: Mapping[str, RunSummary], primary: str = "risky_recall",
             secondary: str = "risky_f1") -> str:
    """Run with the highest mean primary metric, then secondary; earlier runs win ties."""
    candidates = [s for s in summaries.values() if s.folds > 0]
    if not candidates:
        raise EvaluationError("No run has a successful fold")
    best = candidates[0]
    for summary in candidates[1:]:
        key = (summary.mean[primary], summary.mean[secondary])
        if key > (best.mean[primary], best.mean[secondary]):
            best = summary
    return best.run_id


def best_run_per_metric(summaries: Mapping[str, RunSummary]) -> dict[str, str]:
    """metric -> run id with the highest mean; earlier runs win ties."""
    out = {}
    candidates = [s for s in summaries.values() if s.folds > 0]
    for metric in METRIC_NAMES:
        best = None
        for summary in candidates:
            if best is None or summary.mean[metric] > best.mean[metric]:
                best = summary
        if best is not None:
            out[metric] = best.run_id
    return out


def summary_table(summaries: Mapping[str, RunSummary], statistic: str = "mean") -> pd.DataFrame:
    """Heatmap layout: one row per metric, one column per run."""
    columns = [run_id for run_id, s in summaries.items() if s.folds > 0]
    data = {run_id: [getattr(summaries[run_id], statistic)[m] for m in METRIC_NAMES] for run_id in columns}
    return pd.DataFrame(data, index=list(METRIC_NAMES), columns=columns)


def normalize_confusion(counts: ConfusionCounts) -> np.ndarray:
    """
    Confusion matrix as percentages of each true class.

    Rows are true Risky, true Safe; columns are predicted Risky, Safe.

    Raises:
        NormalizationError: if either true class is empty
    """
    if counts.risky_total == 0 or counts.safe_total == 0:
        raise NormalizationError(
            f"Cannot normalize by class totals (risky={counts.risky_total}, safe={counts.safe_total})"
        )
    risky_row = np.array([counts.tp, counts.fn], dtype=np.float64) / counts.risky_total
    safe_row = np.array([counts.fp, counts.tn], dtype=np.float64) / counts.safe_total
    return np.vstack([risky_row, safe_row]) * 100.0


def mean_normalized_confusion(reports: Iterable[FoldReport]) -> np.ndarray:
    """Average of per-fold class-normalized matrices over successful folds."""
    matrices = [normalize_confusion(r.counts) for r in reports if r.ok]
    if not matrices:
        raise EmptyEvaluationError("No successful folds to average")
    return np.mean(matrices, axis=0)


def compare_operating_points(reference: Metrics, candidate: Metrics) -> dict[str, float]:
    """Percentage-point change of every metric from reference to candidate."""
    ref, cand = reference.to_dict(), candidate.to_dict()
    return {name: 100.0 * (cand[name] - ref[name]) for name in METRIC_NAMES}


def per_sample_step(count: int) -> float:
    """Percentage points a rate moves when one of count samples flips."""
    if count <= 0:
        raise EvaluationError(f"Sample count must be positive, got {count}")
    return 100.0 / count


def stability_gain(small_count: int, large_count: int) -> float:
    """How many times smaller the per-sample step becomes on the larger set."""
    return per_sample_step(small_count) / per_sample_step(large_count)


def format_mean_sd(mean: float, sd: float, digits: int = 3) -> str:
    return f"{mean:.{digits}f}±{sd:.{digits}f}"
