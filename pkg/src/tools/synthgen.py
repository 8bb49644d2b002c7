#!/usr/bin/env python3
"""
Synthetic tackle-like clips with a planted, pixel-decidable label.

A bright disc moves in from the left and settles at its contact position
on the FPOC frame, where it stays. Risky clips settle in the upper band,
safe clips just below the midline. The label is read back from the FPOC
frame by thresholding and taking the largest bright component.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import cv2
import numpy as np
from scipy import ndimage

from config.config import SynthConfig
from core.exceptions import OracleError
from core.logger import data_logger
from tools.clipstore import (
    BinaryLabel, Clip, DatasetManifest, FpocAnnotation, ManifestEntry, SattLabel, write_clip, write_manifest,
)
from utils.rng_utils import derive_rng

# Vertical positions as fractions of (H - 1)
RISKY_TARGET = 0.28
SAFE_TARGET = 0.60
ORACLE_BOUNDARY = 0.44
TARGET_JITTER = 0.03

# Horizontal approach as fractions of (W - 1)
START_X = 0.15
CONTACT_X = 0.5

BACKGROUND_LEVEL = 60
BLOB_LEVEL = 230
MIN_CONTRAST = 40.0


@dataclass(frozen=True)
class SyntheticClip:
    source_id: str
    clip: Clip
    label: SattLabel
    fpoc: FpocAnnotation


def class_split(count: int, risky_fraction: float) -> tuple[int, int]:
    """(risky, safe) counts; risky is count * fraction rounded half up."""
    risky = int(np.floor(count * risky_fraction + 0.5))
    return risky, count - risky


def render_clip(cfg: SynthConfig, risky: bool, rng: np.random.Generator) -> tuple[Clip, int]:
    """
    Draw one clip and its FPOC index from a per-clip stream.

    Returns:
        (clip, fpoc_index) with fpoc in [T/4, 3T/4)
    """
    h, w = cfg.height, cfg.width
    frames_total = int(rng.integers(cfg.min_frames, cfg.max_frames + 1))
    fpoc = int(rng.integers(frames_total // 4, (3 * frames_total) // 4))

    base = RISKY_TARGET if risky else SAFE_TARGET
    target_y = (base + rng.uniform(-TARGET_JITTER, TARGET_JITTER)) * (h - 1)
    start_x, contact_x = START_X * (w - 1), CONTACT_X * (w - 1)

    noise = rng.normal(0.0, cfg.noise_level, size=(frames_total, h, w, 1)) if cfg.noise_level > 0 else 0.0
    background = np.clip(np.rint(BACKGROUND_LEVEL + noise), 0, 255)
    frames = np.ascontiguousarray(np.broadcast_to(background, (frames_total, h, w, 3)), dtype=np.uint8)

    cy = int(round(target_y))
    for t in range(frames_total):
        progress = min(1.0, t / fpoc) if fpoc > 0 else 1.0
        cx = int(round(start_x + (contact_x - start_x) * progress))
        cv2.circle(frames[t], (cx, cy), cfg.blob_radius, (BLOB_LEVEL,) * 3, thickness=-1, lineType=cv2.LINE_8)
    return Clip(frames=frames), fpoc


def generate_clips(cfg: SynthConfig) -> list[SyntheticClip]:
    """All clips of a synthetic dataset, in id order, without touching disk."""
    cfg.validate()
    n_risky, _ = class_split(cfg.count, cfg.risky_fraction)
    order = derive_rng(cfg.seed, "labels").permutation(cfg.count)
    risky_ids = set(order[:n_risky].tolist())

    out = []
    for i in range(cfg.count):
        rng = derive_rng(cfg.seed, "clip", i)
        risky = i in risky_ids
        clip, fpoc = render_clip(cfg, risky, rng)
        score = int(rng.integers(0, 2)) if risky else int(rng.integers(2, 4))
        out.append(SyntheticClip(f"synth-{i:04d}", clip, SattLabel(score), FpocAnnotation(fpoc)))
    return out


def generate(cfg: SynthConfig, out_dir: Union[str, Path]) -> DatasetManifest:
    """
    Write a synthetic dataset: clips/<id>.tckl plus manifest.json.

    Returns:
        The manifest of the written clips
    """
    out_dir = Path(out_dir)
    entries = []
    for item in generate_clips(cfg):
        path = (out_dir / "clips" / f"{item.source_id}.tckl").resolve()
        write_clip(path, item.clip)
        entries.append(ManifestEntry(path, item.label, item.fpoc, item.source_id))
    manifest = DatasetManifest(tuple(entries))
    write_manifest(manifest, out_dir / "manifest.json")
    counts = manifest.class_counts
    data_logger.info(
        f"Generated {manifest.total} synthetic clips in {out_dir} "
        f"(risky={counts.get(BinaryLabel.RISKY, 0)}, safe={counts.get(BinaryLabel.SAFE, 0)}, seed {cfg.seed})"
    )
    return manifest


def blob_centroid(frame: np.ndarray) -> tuple[float, float]:
    """
    (y, x) centroid of the largest bright component of one RGB frame.

    Raises:
        OracleError: if the frame has no bright component
    """
    gray = frame.astype(np.float64).mean(axis=-1)
    peak, median = float(gray.max()), float(np.median(gray))
    if peak - median < MIN_CONTRAST:
        raise OracleError(f"No bright blob found (peak {peak:.1f}, median {median:.1f})")
    mask = gray > (peak + median) / 2.0
    components, count = ndimage.label(mask)
    sizes = ndimage.sum(mask, components, index=np.arange(1, count + 1))
    largest = int(np.argmax(sizes)) + 1
    cy, cx = ndimage.center_of_mass(mask, components, largest)
    return float(cy), float(cx)


def oracle_label(clip: Clip, fpoc: Union[int, FpocAnnotation]) -> BinaryLabel:
    """Recover the planted label from the blob height on the FPOC frame."""
    index = fpoc.fpoc_index if isinstance(fpoc, FpocAnnotation) else int(fpoc)
    FpocAnnotation(index).validate_for(clip.num_frames)
    cy, _ = blob_centroid(clip.frames[index])
    return BinaryLabel.RISKY if cy < ORACLE_BOUNDARY * (clip.height - 1) else BinaryLabel.SAFE
