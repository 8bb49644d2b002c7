#!/usr/bin/env python3
"""
Taguchi L18 augmentation schedule and the experiment run grid.

The 18 rows are the published schedule, hard-coded; verify_orthogonality()
guards the transcription. The grid adds two baselines in front of them:
RunOrig (no balancing) and Run0 (duplicate-only balancing).
"""

import itertools
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import pandas as pd

from core.exceptions import ConfigurationError


class Noise(str, Enum):
    NONE = "None"
    ADD_NOISE = "AddNoise"


class Brightness(str, Enum):
    SAME = "Same"
    INCREASE = "Increase"
    DECREASE = "Decrease"


class Rotation(str, Enum):
    NONE = "None"
    LEFT = "Left"
    RIGHT = "Right"


class Flip(str, Enum):
    NONE = "None"
    HORIZONTAL = "Horizontal"
    VERTICAL = "Vertical"


class Balancing(str, Enum):
    NO_BALANCING = "NoBalancing"
    DUPLICATE_ONLY = "DuplicateOnly"
    AUGMENT_TO_BALANCE = "AugmentToBalance"


FACTORS: tuple[tuple[str, type[Enum]], ...] = (
    ("noise", Noise),
    ("brightness", Brightness),
    ("rotation", Rotation),
    ("flip", Flip),
)

RUN_ORIG = "RunOrig"
RUN_ZERO = "Run0"


@dataclass(frozen=True)
class FactorLevels:
    """One point of the 2x3x3x3 augmentation factor space."""
    noise: Noise = Noise.NONE
    brightness: Brightness = Brightness.SAME
    rotation: Rotation = Rotation.NONE
    flip: Flip = Flip.NONE

    def __post_init__(self):
        for name, enum_cls in FACTORS:
            value = getattr(self, name)
            try:
                object.__setattr__(self, name, enum_cls(value))
            except ValueError as e:
                allowed = ", ".join(m.value for m in enum_cls)
                raise ConfigurationError(f"Invalid {name} level {value!r} (allowed: {allowed})") from e

    @classmethod
    def parse(cls, text: str) -> "FactorLevels":
        """Parse 'NOISE,BRIGHT,ROT,FLIP', e.g. 'AddNoise,Decrease,None,None'."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != len(FACTORS):
            raise ConfigurationError(
                f"Expected {len(FACTORS)} comma-separated levels (noise,brightness,rotation,flip), got {text!r}"
            )
        return cls(*parts)

    @classmethod
    def from_dict(cls, data: dict) -> "FactorLevels":
        return cls(**{name: data[name] for name, _ in FACTORS})

    def to_dict(self) -> dict[str, str]:
        return {name: getattr(self, name).value for name, _ in FACTORS}

    def as_tuple(self) -> tuple[str, str, str, str]:
        return tuple(getattr(self, name).value for name, _ in FACTORS)

    @property
    def is_identity(self) -> bool:
        return self == FactorLevels()

    @property
    def is_photometric(self) -> bool:
        """True when no factor moves pixel locations."""
        return self.rotation is Rotation.NONE and self.flip is Flip.NONE

    def __str__(self) -> str:
        return ",".join(self.as_tuple())


@dataclass(frozen=True)
class TaguchiArray:
    """Ordered rows R1..R18."""
    rows: tuple[FactorLevels, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def row(self, run_number: int) -> FactorLevels:
        """Row by 1-based run number (R1 is 1)."""
        if not 1 <= run_number <= len(self.rows):
            raise ConfigurationError(f"Run number {run_number} outside 1..{len(self.rows)}")
        return self.rows[run_number - 1]

    @property
    def run_ids(self) -> list[str]:
        return [f"R{i}" for i in range(1, len(self.rows) + 1)]


@dataclass(frozen=True)
class RunPlan:
    """One experimental configuration of the grid."""
    run_id: str
    levels: Optional[FactorLevels]
    balancing: Balancing

    def __post_init__(self):
        object.__setattr__(self, "balancing", Balancing(self.balancing))
        if self.run_id == RUN_ORIG:
            ok = self.balancing is Balancing.NO_BALANCING and self.levels is None
        elif self.run_id == RUN_ZERO:
            ok = self.balancing is Balancing.DUPLICATE_ONLY and self.levels is None
        else:
            ok = self.balancing is Balancing.AUGMENT_TO_BALANCE and self.levels is not None
        if not ok:
            raise ConfigurationError(
                f"Run {self.run_id} cannot use {self.balancing.value} with levels={self.levels}"
            )

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "levels": self.levels.to_dict() if self.levels is not None else None,
            "balancing": self.balancing.value,
        }


_L18_ROWS = (
    ("None", "Increase", "Left", "Horizontal"),
    ("None", "Increase", "Right", "Vertical"),
    ("None", "Increase", "None", "None"),
    ("None", "Decrease", "Left", "Vertical"),
    ("None", "Decrease", "Right", "None"),
    ("None", "Decrease", "None", "Horizontal"),
    ("None", "Same", "Left", "None"),
    ("None", "Same", "Right", "Horizontal"),
    ("None", "Same", "None", "Vertical"),
    ("AddNoise", "Increase", "Left", "None"),
    ("AddNoise", "Increase", "Right", "Horizontal"),
    ("AddNoise", "Increase", "None", "Vertical"),
    ("AddNoise", "Decrease", "Left", "Horizontal"),
    ("AddNoise", "Decrease", "Right", "Vertical"),
    ("AddNoise", "Decrease", "None", "None"),
    ("AddNoise", "Same", "Left", "Vertical"),
    ("AddNoise", "Same", "Right", "None"),
    ("AddNoise", "Same", "None", "Horizontal"),
)


def build_l18() -> TaguchiArray:
    """Return the L18 augmentation schedule in order R1..R18."""
    return TaguchiArray(rows=tuple(FactorLevels(*row) for row in _L18_ROWS))


def full_factorial() -> list[FactorLevels]:
    """All 54 factor combinations in level-declaration order."""
    return [FactorLevels(*combo) for combo in itertools.product(*(list(e) for _, e in FACTORS))]


@dataclass
class BalanceReport:
    """Outcome of the pairwise balance check."""
    passed: bool
    row_count: int
    distinct_rows: int
    pair_counts: dict[tuple[str, str], dict[tuple[str, str], int]] = field(default_factory=dict)
    level_counts: dict[str, dict[str, int]] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "row_count": self.row_count,
            "distinct_rows": self.distinct_rows,
            "pair_counts": {
                f"{a}x{b}": {f"{la},{lb}": n for (la, lb), n in counts.items()}
                for (a, b), counts in self.pair_counts.items()
            },
            "level_counts": self.level_counts,
            "failures": list(self.failures),
        }


def verify_orthogonality(array: TaguchiArray, expected_rows: int = 18) -> BalanceReport:
    """
    Check pairwise balance of every factor column pair.

    Failure is reported, never raised.

    Args:
        array: Candidate schedule
        expected_rows: Required row count

    Returns:
        BalanceReport listing every column pair's joint level counts
    """
    rows = array.rows
    failures = []
    if len(rows) != expected_rows:
        failures.append(f"expected {expected_rows} rows, found {len(rows)}")

    level_counts = {}
    for name, enum_cls in FACTORS:
        tally = Counter(getattr(r, name).value for r in rows)
        level_counts[name] = {lvl.value: tally.get(lvl.value, 0) for lvl in enum_cls}
        if len(set(level_counts[name].values())) != 1:
            failures.append(f"{name} levels unbalanced: {level_counts[name]}")

    pair_counts = {}
    for (name_a, enum_a), (name_b, enum_b) in itertools.combinations(FACTORS, 2):
        tally = Counter((getattr(r, name_a).value, getattr(r, name_b).value) for r in rows)
        counts = {
            (la.value, lb.value): tally.get((la.value, lb.value), 0)
            for la in enum_a for lb in enum_b
        }
        pair_counts[(name_a, name_b)] = counts
        if len(set(counts.values())) != 1:
            failures.append(f"{name_a}x{name_b} joint counts not uniform")

    return BalanceReport(
        passed=not failures,
        row_count=len(rows),
        distinct_rows=len(set(rows)),
        pair_counts=pair_counts,
        level_counts=level_counts,
        failures=failures,
    )


def enumerate_runs(array: Optional[TaguchiArray] = None) -> list[RunPlan]:
    """The 20-run grid in canonical order: RunOrig, Run0, R1..R18."""
    array = array or build_l18()
    plans = [
        RunPlan(RUN_ORIG, None, Balancing.NO_BALANCING),
        RunPlan(RUN_ZERO, None, Balancing.DUPLICATE_ONLY),
    ]
    plans.extend(
        RunPlan(run_id, levels, Balancing.AUGMENT_TO_BALANCE)
        for run_id, levels in zip(array.run_ids, array.rows)
    )
    return plans


def get_run(run_id: str) -> RunPlan:
    """Look up a run plan by id ('RunOrig', 'Run0', 'R1'..'R18')."""
    for plan in enumerate_runs():
        if plan.run_id == run_id:
            return plan
    raise ConfigurationError(f"Unknown run id {run_id!r}")


def select_runs(run_ids: Sequence[str]) -> list[RunPlan]:
    """Resolve a run filter, keeping canonical order; empty means all 20."""
    if not run_ids:
        return enumerate_runs()
    wanted = set(run_ids)
    for run_id in wanted:
        get_run(run_id)
    return [plan for plan in enumerate_runs() if plan.run_id in wanted]


def run_order(run_id: str) -> int:
    """Position of a run id in the canonical grid order."""
    for index, plan in enumerate(enumerate_runs()):
        if plan.run_id == run_id:
            return index
    raise ConfigurationError(f"Unknown run id {run_id!r}")


def l18_table(array: Optional[TaguchiArray] = None) -> pd.DataFrame:
    """The schedule as a table with columns Run, Noise, Brightness, Rotate, Flip."""
    array = array or build_l18()
    return pd.DataFrame(
        [(run_id, *levels.as_tuple()) for run_id, levels in zip(array.run_ids, array.rows)],
        columns=["Run", "Noise", "Brightness", "Rotate", "Flip"],
    )


def runs_document(plans: Optional[Sequence[RunPlan]] = None) -> list[dict]:
    """JSON-ready description of the run grid."""
    return [plan.to_dict() for plan in (plans or enumerate_runs())]
