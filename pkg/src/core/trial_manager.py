#!/usr/bin/env python3
"""
Trial manager for running (run, fold) trials serially or in a process pool.
"""

from concurrent.futures import ProcessPoolExecutor, as_completed
from contextlib import ExitStack
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

from tqdm import tqdm

from core.exceptions import TackleError
from core.logger import app_logger

# Shared read-only state of a pool worker, installed once per process
_WORKER_CONTEXT: Any = None


def _install_context(context: Any) -> None:
    global _WORKER_CONTEXT
    _WORKER_CONTEXT = context


def _call_in_worker(fn: Callable[[Any, Any], Any], trial: Any) -> Any:
    return fn(_WORKER_CONTEXT, trial)


@dataclass
class TrialOutcome:
    """Result of one trial; error holds the exception when the trial failed."""
    trial: Any
    result: Any = None
    error: Optional[BaseException] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class TrialManager:
    """Runs independent trials with deterministic result ordering."""

    def __init__(self, jobs: int = 1, show_progress: bool = True, description: str = "trials",
                 describe: Callable[[Any], str] = str):
        self.jobs = max(1, int(jobs))
        self.show_progress = show_progress
        self.description = description
        self.describe = describe

    def run(self, fn: Callable[[Any, Any], Any], trials: Sequence[Any], context: Any) -> list[TrialOutcome]:
        """
        Execute fn(context, trial) for every trial.

        Pipeline errors raised by a trial are captured in its outcome and do
        not stop the remaining trials. Any other exception is logged with the
        trial it came from and re-raised. Outcomes come back in input order.

        Args:
            fn: Top-level function (must be picklable when jobs > 1)
            trials: Trial descriptors
            context: Shared state passed to every call

        Returns:
            One TrialOutcome per trial, in the order of trials
        """
        trials = list(trials)
        if not trials:
            return []
        if self.jobs == 1 or len(trials) == 1:
            return self._run_serial(fn, trials, context)
        return self._run_pool(fn, trials, context)

    def _progress(self, total: int) -> tqdm:
        return tqdm(total=total, desc=self.description, unit="trial", disable=not self.show_progress)

    def _run_serial(self, fn, trials, context) -> list[TrialOutcome]:
        outcomes = []
        with self._progress(len(trials)) as bar:
            for trial in trials:
                outcomes.append(self._guarded(fn, context, trial))
                bar.update(1)
        return outcomes

    def _run_pool(self, fn, trials, context) -> list[TrialOutcome]:
        app_logger.info(f"Running {len(trials)} {self.description} on {self.jobs} worker processes")
        outcomes: list[Optional[TrialOutcome]] = [None] * len(trials)
        with ExitStack() as stack:
            pool = stack.enter_context(ProcessPoolExecutor(
                max_workers=self.jobs, initializer=_install_context, initargs=(context,)
            ))
            bar = stack.enter_context(self._progress(len(trials)))
            futures = {pool.submit(_call_in_worker, fn, trial): i for i, trial in enumerate(trials)}
            for future in as_completed(futures):
                i = futures[future]
                try:
                    outcomes[i] = TrialOutcome(trials[i], result=future.result())
                except TackleError as e:
                    app_logger.warning(f"Trial {self.describe(trials[i])} failed: {e}")
                    outcomes[i] = TrialOutcome(trials[i], error=e)
                except Exception as e:
                    self._log_unexpected(trials[i], e)
                    raise
                bar.update(1)
        return outcomes

    def _guarded(self, fn, context, trial) -> TrialOutcome:
        try:
            return TrialOutcome(trial, result=fn(context, trial))
        except TackleError as e:
            app_logger.warning(f"Trial {self.describe(trial)} failed: {e}")
            return TrialOutcome(trial, error=e)
        except Exception as e:
            self._log_unexpected(trial, e)
            raise

    def _log_unexpected(self, trial, error: Exception) -> None:
        app_logger.error(
            f"Trial {self.describe(trial)} raised {type(error).__name__}: {error}; stopping {self.description}"
        )
