#!/usr/bin/env python3
"""
Tests for the command-line interface and its exit codes.
"""

import json

import pytest

from interfaces.cli_interface import build_parser, run_cli
from main import main

SMALL_CONFIG = {
    "model": {"frames": 4, "height": 8, "width": 8, "tubelet_t": 2, "patch_p": 4,
              "hidden_dim": 8, "layers": 1, "heads": 2},
    "train": {"learning_rate": 0.01, "max_epochs": 2, "early_stop_patience": 1},
    "synth": {"count": 30, "height": 16, "width": 16, "blob_radius": 2, "min_frames": 36, "max_frames": 48},
}


@pytest.fixture
def workspace(tmp_path):
    """Synthetic dataset, localized copy and fold file built through the CLI."""
    config = tmp_path / "config.json"
    config.write_text(json.dumps({**SMALL_CONFIG, "output_dir": str(tmp_path / "results")}))
    assert run_cli(["synth", "--count", "30", "--size", "16", "--min-frames", "36", "--max-frames", "48",
                    "--seed", "3", "--out", str(tmp_path / "data")]) == 0
    assert run_cli(["localize", "--manifest", str(tmp_path / "data" / "manifest.json"),
                    "--out", str(tmp_path / "localized")]) == 0
    assert run_cli(["split", "--manifest", str(tmp_path / "localized" / "manifest.json"),
                    "--out", str(tmp_path / "folds.json")]) == 0
    return tmp_path


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_design_command(tmp_path, capsys):
    assert run_cli(["design", "--out", str(tmp_path)]) == 0
    assert "Pairwise balance: passed" in capsys.readouterr().out
    assert (tmp_path / "l18.csv").read_text().splitlines()[0] == "Run,Noise,Brightness,Rotate,Flip"
    assert len(json.loads((tmp_path / "runs.json").read_text())) == 20


def test_dataset_commands(workspace):
    manifest = json.loads((workspace / "localized" / "manifest.json").read_text())
    assert len(manifest) == 30
    assert {r["fpoc"] for r in manifest} == {15}
    folds = json.loads((workspace / "folds.json").read_text())
    assert folds["fold_count"] == 5
    assert sum(len(f) for f in folds["folds"]) == 30


def test_materialize_command(workspace):
    code = run_cli(["materialize", "--manifest", str(workspace / "localized" / "manifest.json"),
                    "--folds", str(workspace / "folds.json"), "--run", "R15", "--fold", "1",
                    "--write-clips", "--out", str(workspace / "trials")])
    assert code == 0
    records = json.loads((workspace / "trials" / "fold1" / "train.json").read_text())
    assert any(r.get("parent_id") for r in records)
    assert (workspace / "trials" / "fold1" / "validation.json").is_file()
    assert any((workspace / "trials" / "fold1" / "clips").iterdir())


def test_augment_command(workspace):
    clip = workspace / "localized" / "clips" / "synth-0000.tckl"
    out = workspace / "aug.tckl"
    preview = workspace / "preview.png"
    code = run_cli(["augment", "--levels", "AddNoise,Decrease,None,None", "--sigma", "10", "--seed", "1",
                    "--in", str(clip), "--out", str(out), "--preview", str(preview)])
    assert code == 0
    assert out.stat().st_size == clip.stat().st_size
    assert preview.read_bytes()[:4] == b"\x89PNG"


def test_train_and_evaluate_commands(workspace):
    report_path = workspace / "report.json"
    code = run_cli(["train", "--manifest", str(workspace / "localized" / "manifest.json"),
                    "--folds", str(workspace / "folds.json"), "--run", "R15", "--fold", "2",
                    "--config", str(workspace / "config.json"),
                    "--checkpoint-dir", str(workspace / "ckpt"), "--out", str(report_path)])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["run_id"] == "R15" and report["fold"] == 2
    assert report["counts"] is not None

    evaluation = workspace / "evaluation.json"
    code = run_cli(["evaluate", "--checkpoint", str(workspace / "ckpt" / "R15" / "fold2.npz"),
                    "--manifest", str(workspace / "localized" / "manifest.json"),
                    "--threshold", "0.5", "--out", str(evaluation)])
    assert code == 0
    doc = json.loads(evaluation.read_text())
    assert doc["threshold"] == 0.5
    assert sum(doc["counts"].values()) == 30


def test_experiment_and_report_commands(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps(SMALL_CONFIG))
    out = tmp_path / "results"
    code = run_cli(["experiment", "--config", str(config), "--runs", "Run0", "--out", str(out), "--no-progress"])
    assert code == 0
    results = next(out.glob("exp-*/results.json"))
    report_dir = tmp_path / "rebuilt"
    assert run_cli(["report", "--results", str(results), "--out", str(report_dir), "--no-svg"]) == 0
    assert (report_dir / "heatmap.csv").is_file()
    assert not (report_dir / "heatmap.svg").exists()


@pytest.mark.parametrize("argv, code", [
    (["split", "--manifest", "/nonexistent/manifest.json", "--out", "folds.json"], 3),
    (["experiment", "--config", "/nonexistent/config.json"], 2),
    (["augment", "--levels", "Loud,Same,None,None", "--in", "a.tckl", "--out", "b.tckl"], 2),
])
def test_error_exit_codes(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run_cli(argv) == code


def test_unknown_run_is_a_configuration_error(workspace):
    code = run_cli(["materialize", "--manifest", str(workspace / "localized" / "manifest.json"),
                    "--folds", str(workspace / "folds.json"), "--run", "R19", "--out", str(workspace / "x")])
    assert code == 2


def test_seed_override_reaches_split(workspace, monkeypatch):
    monkeypatch.setenv("TACKLE_SEED", "5")
    assert run_cli(["split", "--manifest", str(workspace / "localized" / "manifest.json"),
                    "--out", str(workspace / "folds5.json")]) == 0
    assert json.loads((workspace / "folds5.json").read_text())["seed"] == 5


def test_main_entry_point(tmp_path):
    assert main(["design", "--out", str(tmp_path)]) == 0
