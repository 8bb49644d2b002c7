#!/usr/bin/env python3
"""
Focal-loss training of the video transformer and the experiment grid driver.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from config.config import ExperimentConfig, FocalLossConfig, ModelConfig, TrainConfig
from core.exceptions import DivergenceError, TackleError
from core.logger import train_logger
from core.trial_manager import TrialManager
from core.vivit import backward, forward_with_cache, init_parameters, predict_proba, save_checkpoint, softmax
from tools.clipstore import BinaryLabel, Clip, DatasetManifest, prepare_model_input
from tools.designer import RunPlan
from tools.evaluator import ConfusionCounts, FoldReport, compute_metrics, select_threshold
from tools.partitioner import FoldAssignment, balance_training, build_training_clips
from utils.rng_utils import derive_seed, derive_rng

P_FLOOR = 1e-12
EARLY_STOP_THRESHOLD = 0.5


def focal_loss(probabilities: np.ndarray, targets, cfg: FocalLossConfig) -> tuple[np.ndarray, np.ndarray]:
    """
    Focal loss -alpha_y (1 - p_y)^gamma log(p_y) and its gradient w.r.t. the logits.

    Args:
        probabilities: Softmax output, shape (2,) or (B, 2)
        targets: True class index (1 = risky) or an array of them
        cfg: gamma and alpha weighting

    Returns:
        (loss, grad_logits); loss is a scalar for a single sample, else shape (B,)
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    single = probs.ndim == 1
    probs = np.atleast_2d(probs)
    targets = np.atleast_1d(np.asarray(targets, dtype=int))
    rows = np.arange(len(targets))

    alpha = np.where(targets == BinaryLabel.RISKY.index, cfg.alpha_risky, cfg.alpha_safe)
    p_y = np.maximum(probs[rows, targets], P_FLOOR)
    one_minus = np.clip(1.0 - p_y, 0.0, None)
    log_p = np.log(p_y)
    modulating = one_minus ** cfg.gamma
    loss = -alpha * modulating * log_p

    # dL/dp_y, with the (1 - p)^(gamma - 1) term dropped where 1 - p = 0
    safe_base = np.where(one_minus > 0, one_minus, 1.0)
    focus = np.where(one_minus > 0, cfg.gamma * safe_base ** (cfg.gamma - 1.0) * log_p, 0.0)
    dl_dpy = alpha * (focus - modulating / p_y)

    onehot = np.zeros_like(probs)
    onehot[rows, targets] = 1.0
    grad = (dl_dpy * p_y)[:, None] * (onehot - probs)
    if single:
        return loss[0], grad[0]
    return loss, grad


class AdamOptimizer:
    """Adam with bias correction, updating parameter arrays in place."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "AdamOptimizer":
        return cls(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t
        for name, grad in grads.items():
            m = self._m.setdefault(name, np.zeros_like(params[name]))
            v = self._v.setdefault(name, np.zeros_like(params[name]))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)
            params[name] -= update.astype(params[name].dtype, copy=False)


class EarlyStopping:
    """Tracks the best epoch of a metric that should increase."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_metric = -np.inf
        self.best_epoch: Optional[int] = None
        self.wait = 0

    def update(self, epoch: int, metric: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_macro_f1: float
    improved: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_macro_f1": self.val_macro_f1,
            "improved": self.improved,
        }


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: Optional[int] = None

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def _macro_f1_at(probs: np.ndarray, targets: np.ndarray, threshold: float) -> float:
    counts = ConfusionCounts.from_predictions(targets == BinaryLabel.RISKY.index, probs >= threshold)
    return compute_metrics(counts).macro_f1


def train_fold(train_x: np.ndarray, train_y: np.ndarray, val_x: np.ndarray, val_y: np.ndarray,
               model_config: ModelConfig, train_config: TrainConfig, loss_config: FocalLossConfig,
               stream: Sequence[Any] = ()) -> TrainResult:
    """
    Train one model and keep the parameters of its best validation epoch.

    Model selection uses validation macro-F1 at a fixed 0.5 threshold.

    Args:
        train_x, train_y: Model inputs (N, T, H, W, C) and class indices
        val_x, val_y: Validation inputs and class indices
        model_config: Model geometry
        train_config: Optimizer, batch size, epochs, patience and seed
        loss_config: Focal loss weighting
        stream: Keys (run id, fold) separating this trial's random streams

    Returns:
        TrainResult with the restored best parameters and the epoch log

    Raises:
        DivergenceError: if a batch loss is not finite
    """
    dtype = np.dtype(train_config.dtype)
    train_x = np.asarray(train_x, dtype=dtype)
    val_x = np.asarray(val_x, dtype=dtype)
    train_y = np.asarray(train_y, dtype=int)
    val_y = np.asarray(val_y, dtype=int)

    params = init_parameters(model_config, derive_seed(train_config.seed, *stream, "init"), dtype)
    shuffle_rng = derive_rng(train_config.seed, *stream, "shuffle")
    optimizer = AdamOptimizer.from_config(train_config)
    stopper = EarlyStopping(train_config.early_stop_patience)
    best_params = {name: value.copy() for name, value in params.items()}
    history: list[EpochLog] = []
    label = "/".join(str(k) for k in stream) or "trial"

    n = len(train_x)
    for epoch in range(1, train_config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        for batch_index, start in enumerate(range(0, n, train_config.batch_size), start=1):
            idx = order[start:start + train_config.batch_size]
            logits, _, cache = forward_with_cache(train_x[idx], params, model_config)
            losses, grad_logits = focal_loss(softmax(logits.astype(np.float64)), train_y[idx], loss_config)
            batch_loss = float(np.mean(losses))
            if not np.isfinite(batch_loss):
                raise DivergenceError(epoch, batch_index, batch_loss)
            grads = backward(grad_logits / len(idx), cache, params, model_config)
            optimizer.step(params, grads)
            total_loss += batch_loss * len(idx)

        val_probs = predict_proba(params, val_x, model_config, batch_size=max(train_config.batch_size, 16))
        val_f1 = _macro_f1_at(val_probs, val_y, EARLY_STOP_THRESHOLD)
        stop = stopper.update(epoch, val_f1)
        improved = stopper.best_epoch == epoch
        if improved:
            best_params = {name: value.copy() for name, value in params.items()}
        history.append(EpochLog(epoch, total_loss / n, val_f1, improved))
        train_logger.debug(
            f"{label} epoch {epoch}: loss {total_loss / n:.4f}, val macro-F1 {val_f1:.4f}"
            f"{' (best)' if improved else ''}"
        )
        if stop:
            train_logger.debug(f"{label} early stop at epoch {epoch}, best epoch {stopper.best_epoch}")
            break

    return TrainResult(params=best_params, history=history, best_epoch=stopper.best_epoch)


def stack_inputs(clips: Sequence[Clip], model_config: ModelConfig, dtype: str = "float32") -> np.ndarray:
    """Model input tensor (N, T, H, W, C) for a list of localized clips."""
    shape = (len(clips), model_config.frames, model_config.height, model_config.width, model_config.channels)
    out = np.empty(shape, dtype=dtype)
    for i, clip in enumerate(clips):
        out[i] = prepare_model_input(clip, model_config.frames, model_config.height, model_config.width)
    return out


@dataclass(frozen=True)
class TrialContext:
    """Read-only state shared by every trial of a grid."""
    manifest: DatasetManifest
    assignment: FoldAssignment
    clips: Mapping[str, Clip]
    config: ExperimentConfig
    checkpoint_dir: Optional[str] = None


def run_trial(context: TrialContext, plan: RunPlan, fold: int) -> FoldReport:
    """
    Balance, train and evaluate one (run, fold) trial.

    The operating threshold is the macro-F1-maximizing one on the fold's
    validation set.
    """
    cfg = context.config
    manifest = context.manifest
    labels = manifest.labels()

    training = balance_training(fold, context.assignment, manifest, plan, cfg.augment,
                                cfg.safe_subset_fraction)
    training_clips = build_training_clips(training, context.clips, manifest, cfg.augment)
    train_x = stack_inputs([tc.clip for tc in training_clips], cfg.model, cfg.train.dtype)
    train_y = np.array([tc.label.index for tc in training_clips], dtype=int)

    val_ids = context.assignment.validation_ids(fold)
    val_x = stack_inputs([context.clips[sid] for sid in val_ids], cfg.model, cfg.train.dtype)
    val_y = np.array([labels[sid].index for sid in val_ids], dtype=int)

    train_logger.info(
        f"{plan.run_id} fold {fold}: training on {training.size} clips "
        f"({len(training.synthesized)} synthesized), validating on {len(val_ids)}"
    )
    result = train_fold(train_x, train_y, val_x, val_y, cfg.model, cfg.train, cfg.loss,
                        stream=(plan.run_id, fold))

    val_probs = predict_proba(result.params, val_x, cfg.model)
    choice = select_threshold(zip(val_probs.tolist(), (val_y == BinaryLabel.RISKY.index).tolist()))
    if context.checkpoint_dir is not None:
        save_checkpoint(Path(context.checkpoint_dir) / plan.run_id / f"fold{fold}.npz", result.params, cfg.model)

    report = FoldReport(
        run_id=plan.run_id,
        fold=fold,
        threshold=choice.threshold,
        counts=choice.counts,
        training_size=training.size,
        synthesized_count=len(training.synthesized),
        best_epoch=result.best_epoch,
        epochs_run=result.epochs_run,
        history=[h.to_dict() for h in result.history],
    )
    metrics = report.metrics
    train_logger.info(
        f"{plan.run_id} fold {fold}: threshold {choice.threshold:.3f}, risky recall "
        f"{metrics.risky_recall:.3f}, macro-F1 {metrics.macro_f1:.3f}"
    )
    return report


def _grid_worker(context: TrialContext, trial: tuple[RunPlan, int]) -> FoldReport:
    plan, fold = trial
    return run_trial(context, plan, fold)


def trial_name(trial: tuple[RunPlan, int]) -> str:
    plan, fold = trial
    return f"{plan.run_id}/fold{fold}"


@dataclass
class GridResult:
    reports: list[FoldReport]
    errors: list[tuple[str, int, TackleError]] = field(default_factory=list)


def run_grid(context: TrialContext, plans: Sequence[RunPlan], jobs: int = 1,
             show_progress: bool = True) -> GridResult:
    """
    Run every (plan, fold) trial.

    A trial failing with a pipeline error yields a FoldReport carrying that
    error; the rest of the grid still runs. Any other exception is logged
    with its run and fold, then aborts the grid. Reports are ordered by run,
    then fold.
    """
    trials = [(plan, fold) for plan in plans for fold in range(context.assignment.fold_count)]
    manager = TrialManager(jobs=jobs, show_progress=show_progress, description="trials", describe=trial_name)
    outcomes = manager.run(_grid_worker, trials, context)

    result = GridResult(reports=[])
    for outcome in outcomes:
        plan, fold = outcome.trial
        if outcome.ok:
            result.reports.append(outcome.result)
            continue
        error = outcome.error
        result.errors.append((plan.run_id, fold, error))
        result.reports.append(FoldReport(
            run_id=plan.run_id, fold=fold,
            error=str(error), error_type=type(error).__name__,
        ))
    return result
