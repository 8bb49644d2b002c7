#!/usr/bin/env python3
"""
Tests for the L18 schedule and the run grid.
"""

from pathlib import Path

import pytest

from core.exceptions import ConfigurationError
from tools.designer import (
    RUN_ORIG, RUN_ZERO, Balancing, Brightness, FactorLevels, Flip, Noise, Rotation, RunPlan, TaguchiArray,
    build_l18, enumerate_runs, full_factorial, get_run, l18_table, run_order, runs_document, select_runs,
    verify_orthogonality,
)


def test_l18_has_eighteen_distinct_rows():
    array = build_l18()
    assert len(array) == 18
    assert len(set(array.rows)) == 18
    assert array.run_ids[0] == "R1" and array.run_ids[-1] == "R18"


def test_published_rows_are_transcribed():
    array = build_l18()
    assert array.row(1) == FactorLevels(Noise.NONE, Brightness.INCREASE, Rotation.LEFT, Flip.HORIZONTAL)
    assert array.row(15) == FactorLevels("AddNoise", "Decrease", "None", "None")
    assert array.row(18) == FactorLevels("AddNoise", "Same", "None", "Horizontal")


def test_l18_is_pairwise_balanced():
    report = verify_orthogonality(build_l18())
    assert report.passed, report.failures
    assert report.distinct_rows == 18
    for (a, b), counts in report.pair_counts.items():
        assert len(set(counts.values())) == 1, (a, b)
    # 2-level column against a 3-level column: 18 / 6 = 3 rows per pair
    assert set(report.pair_counts[("noise", "brightness")].values()) == {3}
    # two 3-level columns: 18 / 9 = 2 rows per pair
    assert set(report.pair_counts[("rotation", "flip")].values()) == {2}
    assert report.level_counts["noise"] == {"None": 9, "AddNoise": 9}


def test_broken_schedule_is_reported_not_raised():
    rows = list(build_l18().rows)
    rows[0] = rows[1]
    report = verify_orthogonality(TaguchiArray(tuple(rows)))
    assert not report.passed
    assert report.distinct_rows == 17
    assert report.failures

    short = verify_orthogonality(TaguchiArray(tuple(rows[:17])))
    assert not short.passed
    assert any("expected 18 rows" in f for f in short.failures)


def test_full_factorial_contains_every_l18_row():
    space = full_factorial()
    assert len(space) == 54
    assert len(set(space)) == 54
    assert set(build_l18().rows) <= set(space)


def test_run_grid_order_and_balancing():
    plans = enumerate_runs()
    assert [p.run_id for p in plans] == [RUN_ORIG, RUN_ZERO] + [f"R{i}" for i in range(1, 19)]
    assert plans[0].balancing is Balancing.NO_BALANCING and plans[0].levels is None
    assert plans[1].balancing is Balancing.DUPLICATE_ONLY and plans[1].levels is None
    assert all(p.balancing is Balancing.AUGMENT_TO_BALANCE for p in plans[2:])


def test_run_plan_rejects_mismatched_balancing():
    with pytest.raises(ConfigurationError):
        RunPlan(RUN_ORIG, None, Balancing.DUPLICATE_ONLY)
    with pytest.raises(ConfigurationError):
        RunPlan("R3", None, Balancing.AUGMENT_TO_BALANCE)


def test_parse_levels():
    levels = FactorLevels.parse("AddNoise, Decrease,None,None")
    assert levels == build_l18().row(15)
    assert str(levels) == "AddNoise,Decrease,None,None"
    assert levels.is_photometric
    assert not levels.is_identity
    assert FactorLevels().is_identity


@pytest.mark.parametrize("text", ["AddNoise,Decrease,None", "Loud,Same,None,None", ""])
def test_parse_levels_rejects_bad_input(text):
    with pytest.raises(ConfigurationError):
        FactorLevels.parse(text)


def test_lookup_and_selection():
    assert get_run("R15").levels == build_l18().row(15)
    assert run_order("R1") == 2
    with pytest.raises(ConfigurationError):
        get_run("R19")
    selected = select_runs(["R2", RUN_ORIG])
    assert [p.run_id for p in selected] == [RUN_ORIG, "R2"]
    assert len(select_runs([])) == 20


def test_tables():
    table = l18_table()
    assert list(table.columns) == ["Run", "Noise", "Brightness", "Rotate", "Flip"]
    assert len(table) == 18
    doc = runs_document()
    assert doc[0] == {"run_id": "RunOrig", "levels": None, "balancing": "NoBalancing"}
    assert doc[2]["levels"] == {"noise": "None", "brightness": "Increase", "rotation": "Left",
                                "flip": "Horizontal"}


def test_documented_level_examples_parse():
    notes = (Path(__file__).parent.parent / "docs" / "notes.txt").read_text()
    examples = [line.split("--levels ", 1)[1].split()[0] for line in notes.splitlines() if "--levels " in line]
    assert examples
    for text in examples:
        FactorLevels.parse(text)
    assert ".tclip" not in notes
