#!/usr/bin/env python3
"""
Shared pytest setup: import paths and small synthetic fixtures.
"""

import os
import sys

ROOT = os.path.join(os.path.dirname(__file__), '..')

# Add project root and src directory to path for imports
for _path in (ROOT, os.path.join(ROOT, 'src')):
    if _path not in sys.path:
        sys.path.insert(0, _path)

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from tools.clipstore import (  # noqa: E402
    Clip, DatasetManifest, FpocAnnotation, ManifestEntry, SattLabel, write_clip,
)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end checks that train real models")


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    monkeypatch.delenv("TACKLE_SEED", raising=False)


def make_clip(frames: int = 32, height: int = 16, width: int = 16, seed: int = 0) -> Clip:
    """Random uint8 clip."""
    rng = np.random.default_rng(seed)
    return Clip(frames=rng.integers(0, 256, size=(frames, height, width, 3), dtype=np.uint8))


def make_manifest(tmp_path, risky: int, safe: int, frames: int = 32, size: int = 16) -> DatasetManifest:
    """Manifest of tiny random clips on disk; risky entries come first."""
    entries = []
    for i in range(risky + safe):
        source_id = f"clip-{i:03d}"
        path = tmp_path / "clips" / f"{source_id}.tckl"
        write_clip(path, make_clip(frames, size, size, seed=i))
        score = i % 2 if i < risky else 2 + i % 2
        entries.append(ManifestEntry(path, SattLabel(score), FpocAnnotation(frames // 2), source_id))
    return DatasetManifest(tuple(entries))
