#!/usr/bin/env python3
"""
Tests for experiment configuration loading, hashing and seed overrides.
"""

import json
from dataclasses import replace

import pytest

from config.config import (
    CLIP_LENGTH, ExperimentConfig, ModelConfig, SynthConfig, TrainConfig, apply_seed_override,
)
from core.exceptions import ConfigurationError


def test_defaults_are_valid():
    cfg = ExperimentConfig()
    cfg.validate()
    assert CLIP_LENGTH == 32
    assert cfg.fold_count == 5 and cfg.split_seed == 42
    assert cfg.loss.gamma == 1.6 and cfg.loss.alpha_risky == 0.6
    assert cfg.loss.alpha_safe == pytest.approx(0.4)


def test_from_file_roundtrip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "output_dir": str(tmp_path / "out"),
        "runs": ["R15", "RunOrig"],
        "model": {"hidden_dim": 32, "heads": 4},
        "train": {"max_epochs": 3, "early_stop_patience": 1},
    }))
    cfg = ExperimentConfig.from_file(str(path))
    assert cfg.runs == ("R15", "RunOrig")
    assert cfg.model.hidden_dim == 32
    assert cfg.train.max_epochs == 3
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("data", [
    {"unknown": 1},
    {"model": {"hidden_dim": 30, "heads": 4}},
    {"model": {"depth": 3}},
    {"train": {"max_epochs": 3, "early_stop_patience": 3}},
    {"fold_count": 1},
    {"synth": None},
    [],
])
def test_invalid_configs_are_rejected(data):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(data)


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_file(str(tmp_path / "absent.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_file(str(bad))


def test_config_hash_ignores_execution_settings():
    cfg = ExperimentConfig()
    assert cfg.config_hash() == ExperimentConfig().config_hash()
    assert replace(cfg, jobs=4, output_dir="elsewhere").config_hash() == cfg.config_hash()
    assert replace(cfg, split_seed=7).config_hash() != cfg.config_hash()
    assert replace(cfg, train=TrainConfig(seed=1)).config_hash() != cfg.config_hash()
    assert cfg.artifact_dir.name == f"exp-{cfg.config_hash()[:12]}"


def test_seed_override():
    cfg = ExperimentConfig(synth=SynthConfig(seed=3))
    assert apply_seed_override(cfg, {}) is cfg
    overridden = apply_seed_override(cfg, {"TACKLE_SEED": "9"})
    assert overridden.seeds() == {"split": 9, "augment": 9, "train": 9, "synth": 9}
    with pytest.raises(ConfigurationError):
        apply_seed_override(cfg, {"TACKLE_SEED": "nine"})


def test_model_presets():
    assert ModelConfig.desk().token_count == 64
    base = ModelConfig.base()
    assert (base.frames, base.height, base.patch_p, base.hidden_dim) == (32, 224, 16, 768)
    base.validate()
