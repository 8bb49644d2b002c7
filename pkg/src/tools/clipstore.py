#!/usr/bin/env python3
"""
Clip data model, the TCKL container, label sidecars and FPOC localization.

Container layout (little-endian):
    4 bytes  magic "TCKL"
    u16      version (1)
    u32 x 4  T, H, W, C
    T*H*W*C  u8 samples, row-major
"""

import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Union

import cv2
import numpy as np

from config.config import (
    CLIP_MAGIC, CLIP_VERSION, FRAMES_AFTER_FPOC, FRAMES_BEFORE_FPOC, NOMINAL_FRAME_RATE,
)
from core.exceptions import AnnotationError, ClipFormatError, LabelError, ManifestError
from core.logger import data_logger
from utils.io_utils import atomic_write_bytes, read_json, write_json

HEADER = struct.Struct("<4sHIIII")

PathLike = Union[str, Path]


class BinaryLabel(str, Enum):
    RISKY = "Risky"
    SAFE = "Safe"

    @property
    def index(self) -> int:
        """Class index used by the model; risky is the positive class."""
        return 1 if self is BinaryLabel.RISKY else 0


@dataclass(frozen=True, eq=False)
class Clip:
    """A T x H x W x 3 uint8 frame tensor."""
    frames: np.ndarray
    frame_rate: float = NOMINAL_FRAME_RATE

    def __post_init__(self):
        frames = self.frames
        if not isinstance(frames, np.ndarray) or frames.dtype != np.uint8:
            raise ClipFormatError("<memory>", "frames must be a uint8 numpy array")
        if frames.ndim != 4 or frames.shape[3] != 3:
            raise ClipFormatError("<memory>", f"expected T x H x W x 3, got shape {frames.shape}")
        if min(frames.shape[:3]) < 1:
            raise ClipFormatError("<memory>", f"empty dimension in shape {frames.shape}")
        if frames.flags.writeable:
            frames = frames.copy()
            frames.setflags(write=False)
            object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape

    def with_frames(self, frames: np.ndarray) -> "Clip":
        """New clip with the same frame rate."""
        return Clip(frames=frames, frame_rate=self.frame_rate)


@dataclass(frozen=True)
class SattLabel:
    """SATT strike-zone score and its binary mapping."""
    score: int

    def __post_init__(self):
        if isinstance(self.score, bool) or not isinstance(self.score, (int, np.integer)) \
                or not 0 <= int(self.score) <= 3:
            raise LabelError(self.score)
        object.__setattr__(self, "score", int(self.score))

    @property
    def binary(self) -> BinaryLabel:
        return BinaryLabel.RISKY if self.score <= 1 else BinaryLabel.SAFE


@dataclass(frozen=True)
class FpocAnnotation:
    """Zero-based frame index of the first point of contact."""
    fpoc_index: int

    def validate_for(self, frame_count: int, source: str = "clip") -> None:
        if not 0 <= self.fpoc_index < frame_count:
            raise AnnotationError(self.fpoc_index, frame_count, source)


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: SattLabel
    fpoc: FpocAnnotation
    source_id: str

    def to_dict(self, base_dir: Optional[Path] = None) -> dict:
        path = self.path
        if base_dir is not None:
            try:
                path = self.path.relative_to(base_dir)
            except ValueError:
                pass
        return {
            "path": path.as_posix(),
            "satt_score": self.label.score,
            "fpoc": self.fpoc.fpoc_index,
            "source_id": self.source_id,
        }


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered clip entries; class counts are always derived from the entries."""
    entries: tuple[ManifestEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = Counter(e.source_id for e in self.entries)
        duplicates = sorted(sid for sid, n in seen.items() if n > 1)
        if duplicates:
            raise ManifestError(f"Duplicate source_id values: {', '.join(duplicates[:5])}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def class_counts(self) -> dict[BinaryLabel, int]:
        tally = Counter(e.label.binary for e in self.entries)
        return {label: tally[label] for label in BinaryLabel if tally[label]}

    @property
    def total(self) -> int:
        return len(self.entries)

    @property
    def source_ids(self) -> list[str]:
        return [e.source_id for e in self.entries]

    def entry(self, source_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.source_id == source_id:
                return e
        raise ManifestError(f"Unknown source_id {source_id!r}")

    def labels(self) -> dict[str, BinaryLabel]:
        return {e.source_id: e.label.binary for e in self.entries}

    def ids_with_label(self, label: BinaryLabel) -> list[str]:
        return [e.source_id for e in self.entries if e.label.binary is label]


def localize_clip(raw: Clip, fpoc: FpocAnnotation) -> Clip:
    """
    Cut the 32-frame window [fpoc-15, fpoc+16] around the first point of contact.

    Indices outside the raw clip repeat the first or last frame.

    Args:
        raw: Clip of any length
        fpoc: Contact frame annotation

    Returns:
        Clip with exactly 32 frames; the contact frame sits at index 15
    """
    fpoc.validate_for(raw.num_frames)
    indices = np.arange(fpoc.fpoc_index - FRAMES_BEFORE_FPOC, fpoc.fpoc_index + FRAMES_AFTER_FPOC + 1)
    indices = np.clip(indices, 0, raw.num_frames - 1)
    return raw.with_frames(raw.frames[indices])


def resize_clip(clip: Clip, target_h: int, target_w: int) -> Clip:
    """Bilinear spatial resize of every frame; T and C are unchanged."""
    if target_h < 1 or target_w < 1:
        raise ClipFormatError("<memory>", f"invalid target size {target_h}x{target_w}")
    if (clip.height, clip.width) == (target_h, target_w):
        return clip.with_frames(clip.frames.copy())
    resized = np.stack([
        cv2.resize(frame, (target_w, target_h), interpolation=cv2.INTER_LINEAR)
        for frame in clip.frames
    ])
    return clip.with_frames(resized)


def subsample_indices(length: int, frames: int, anchor: int) -> np.ndarray:
    """
    Evenly spaced frame indices with stride length / frames that include anchor.

    The grid is shifted so one sample falls exactly on anchor and every
    sample rounds into the clip. Indices are strictly increasing when
    frames <= length; upsampling repeats frames.
    """
    if not 0 <= anchor < length:
        raise AnnotationError(anchor, length, "window")
    before = ((2 * anchor + 1) * frames) // (2 * length)
    offsets = np.arange(frames) - before
    positions = (anchor * frames + length * offsets) / frames
    return np.clip(np.round(positions), 0, length - 1).astype(int)


def prepare_model_input(clip: Clip, frames: int, height: int, width: int,
                        fpoc_index: Optional[int] = None) -> np.ndarray:
    """
    Convert a localized clip to the model's input tensor.

    Frames are subsampled on an even grid that always keeps the FPOC frame
    (index 15 of a localized window unless fpoc_index says otherwise), resized
    bilinearly, scaled to [0, 1], then standardized with mean 0.5 and std 0.5
    per channel. For a 32-frame window and 8 model frames the kept indices are
    3, 7, 11, 15, 19, 23, 27, 31.
    """
    if clip.num_frames != frames:
        anchor = fpoc_index if fpoc_index is not None else min(FRAMES_BEFORE_FPOC, clip.num_frames // 2)
        clip = clip.with_frames(clip.frames[subsample_indices(clip.num_frames, frames, anchor)])
    clip = resize_clip(clip, height, width)
    scaled = clip.frames.astype(np.float32) / 255.0
    return (scaled - 0.5) / 0.5


def write_clip(path: PathLike, clip: Clip) -> None:
    """Serialize a clip to the TCKL container."""
    t, h, w, c = clip.shape
    payload = HEADER.pack(CLIP_MAGIC, CLIP_VERSION, t, h, w, c) + np.ascontiguousarray(clip.frames).tobytes()
    atomic_write_bytes(path, payload)


def _parse_header(raw: bytes, path: str) -> tuple[int, int, int, int]:
    if len(raw) < HEADER.size:
        raise ClipFormatError(path, f"file shorter than the {HEADER.size}-byte header")
    magic, version, t, h, w, c = HEADER.unpack_from(raw)
    if magic != CLIP_MAGIC:
        raise ClipFormatError(path, f"bad magic {magic!r}")
    if version != CLIP_VERSION:
        raise ClipFormatError(path, f"unsupported version {version}")
    if min(t, h, w) < 1 or c != 3:
        raise ClipFormatError(path, f"invalid shape header {(t, h, w, c)}")
    return t, h, w, c


def read_clip_header(path: PathLike) -> tuple[int, int, int, int]:
    """Read only the shape header of a clip file."""
    with open(path, "rb") as handle:
        return _parse_header(handle.read(HEADER.size), str(path))


def read_clip(path: PathLike) -> Clip:
    """Deserialize a TCKL clip; the payload must match the header exactly."""
    raw = Path(path).read_bytes()
    t, h, w, c = _parse_header(raw, str(path))
    expected = t * h * w * c
    payload = len(raw) - HEADER.size
    if payload != expected:
        kind = "truncated" if payload < expected else "oversized"
        raise ClipFormatError(str(path), f"{kind} payload: header declares {expected} samples, found {payload}")
    frames = np.frombuffer(raw, dtype=np.uint8, offset=HEADER.size).reshape(t, h, w, c)
    return Clip(frames=frames)


def load_manifest(path: PathLike) -> DatasetManifest:
    """
    Load and validate a JSON manifest.

    Relative clip paths resolve against the manifest's directory.

    Raises:
        LabelError: score outside 0..3
        ManifestError: malformed entry or missing clip file
        AnnotationError: FPOC outside its clip
    """
    manifest_path = Path(path)
    try:
        records = read_json(manifest_path)
    except FileNotFoundError as e:
        raise ManifestError(f"Manifest not found: {manifest_path}") from e
    except ValueError as e:
        raise ManifestError(f"Manifest {manifest_path} is not valid JSON: {e}") from e
    if not isinstance(records, list):
        raise ManifestError(f"Manifest {manifest_path} must be a JSON array")

    base_dir = manifest_path.parent
    entries = []
    for i, record in enumerate(records):
        try:
            clip_path = Path(record["path"])
            score = record["satt_score"]
            fpoc_index = record["fpoc"]
            source_id = str(record["source_id"])
        except (KeyError, TypeError) as e:
            raise ManifestError(f"Entry {i} in {manifest_path} is missing field {e}") from e

        if isinstance(score, bool) or not isinstance(score, int) or not 0 <= score <= 3:
            raise LabelError(score, source_id)
        label = SattLabel(score)
        if not clip_path.is_absolute():
            clip_path = base_dir / clip_path
        if not clip_path.is_file():
            raise ManifestError(f"Clip file for {source_id} not found: {clip_path}")
        if not isinstance(fpoc_index, int) or isinstance(fpoc_index, bool):
            raise ManifestError(f"Entry {source_id} has non-integer fpoc {fpoc_index!r}")
        fpoc = FpocAnnotation(fpoc_index)
        frame_count = read_clip_header(clip_path)[0]
        fpoc.validate_for(frame_count, source=source_id)
        entries.append(ManifestEntry(clip_path, label, fpoc, source_id))

    manifest = DatasetManifest(tuple(entries))
    data_logger.info(
        f"Loaded {manifest.total} entries from {manifest_path} "
        f"({', '.join(f'{k.value}={v}' for k, v in manifest.class_counts.items()) or 'empty'})"
    )
    return manifest


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    """Write a manifest with paths relative to its own directory when possible."""
    target = Path(path)
    base_dir = target.parent.resolve()
    write_json(target, [
        ManifestEntry(e.path.resolve(), e.label, e.fpoc, e.source_id).to_dict(base_dir)
        for e in manifest.entries
    ])


def load_clips(manifest: DatasetManifest, ids: Optional[Iterable[str]] = None) -> dict[str, Clip]:
    """Read the clips of a manifest into memory, keyed by source_id."""
    wanted = None if ids is None else set(ids)
    return {
        e.source_id: read_clip(e.path)
        for e in manifest.entries
        if wanted is None or e.source_id in wanted
    }
