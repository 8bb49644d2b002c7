#!/usr/bin/env python3
"""
Configuration constants and settings for the tackle experiment pipeline.
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, ClassVar, Mapping, Optional

from core.exceptions import ConfigurationError
from utils.io_utils import content_hash, read_json

# Temporal localization around the first point of contact
FRAMES_BEFORE_FPOC = 15
FRAMES_AFTER_FPOC = 16
CLIP_LENGTH = FRAMES_BEFORE_FPOC + 1 + FRAMES_AFTER_FPOC
NOMINAL_FRAME_RATE = 30.0

# Cross-validation protocol
FOLD_COUNT = 5
SPLIT_SEED = 42
SAFE_SUBSET_FRACTION = 0.2

# Clip container
CLIP_MAGIC = b"TCKL"
CLIP_VERSION = 1
CHECKPOINT_VERSION = 1

# Environment override for every seed (smoke tests)
SEED_ENV_VAR = "TACKLE_SEED"

# Exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_DIVERGENCE = 4
EXIT_INVARIANT = 5


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigurationError(message)


def _build(cls, data: Mapping[str, Any], section: str):
    """Instantiate a config dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"Section '{section}' must be an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"Unknown keys in '{section}': {', '.join(unknown)}")
    try:
        instance = cls(**data)
    except TypeError as e:
        raise ConfigurationError(f"Invalid '{section}' section: {e}") from e
    instance.validate()
    return instance


@dataclass(frozen=True)
class ModelConfig:
    """Video vision transformer geometry and width."""
    frames: int = 8
    height: int = 32
    width: int = 32
    channels: int = 3
    tubelet_t: int = 2
    patch_p: int = 8
    hidden_dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: Optional[int] = None
    classes: int = 2

    @classmethod
    def desk(cls) -> "ModelConfig":
        """Small configuration that trains in minutes on a CPU."""
        return cls()

    @classmethod
    def base(cls) -> "ModelConfig":
        """Base-size geometry: 32 frames of 224x224, 16x16 patches, tubelets of 2."""
        return cls(frames=32, height=224, width=224, tubelet_t=2, patch_p=16,
                   hidden_dim=768, layers=12, heads=12)

    @property
    def ffn_width(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.hidden_dim

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    @property
    def patch_dim(self) -> int:
        return self.tubelet_t * self.patch_p * self.patch_p * self.channels

    @property
    def grid(self) -> tuple[int, int, int]:
        return (self.frames // self.tubelet_t,
                self.height // self.patch_p,
                self.width // self.patch_p)

    @property
    def token_count(self) -> int:
        nt, nh, nw = self.grid
        return nt * nh * nw

    def validate(self) -> None:
        """Validate model geometry."""
        for name in ("frames", "height", "width", "tubelet_t", "patch_p",
                     "hidden_dim", "layers", "heads", "classes"):
            _check(getattr(self, name) >= 1, f"{name} must be positive, got {getattr(self, name)}")
        _check(self.channels == 3, f"channels must be 3 (RGB), got {self.channels}")
        _check(self.frames % self.tubelet_t == 0,
               f"frames ({self.frames}) must be divisible by tubelet_t ({self.tubelet_t})")
        _check(self.height % self.patch_p == 0 and self.width % self.patch_p == 0,
               f"height/width ({self.height}x{self.width}) must be divisible by patch_p ({self.patch_p})")
        _check(self.hidden_dim % self.heads == 0,
               f"hidden_dim ({self.hidden_dim}) must be divisible by heads ({self.heads})")
        _check(self.ffn_width >= 1, f"ffn_dim must be positive, got {self.ffn_dim}")


@dataclass(frozen=True)
class FocalLossConfig:
    """Focal loss weighting; risky is the positive class."""
    gamma: float = 1.6
    alpha_risky: float = 0.6

    @property
    def alpha_safe(self) -> float:
        return 1.0 - self.alpha_risky

    def validate(self) -> None:
        _check(self.gamma >= 0.0, f"gamma must be >= 0, got {self.gamma}")
        _check(0.0 < self.alpha_risky < 1.0, f"alpha_risky must be in (0, 1), got {self.alpha_risky}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and stopping settings."""
    learning_rate: float = 3e-4
    batch_size: int = 8
    max_epochs: int = 50
    early_stop_patience: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dtype: str = "float32"
    seed: int = 0

    def validate(self) -> None:
        _check(self.learning_rate > 0.0, f"learning_rate must be positive, got {self.learning_rate}")
        _check(self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}")
        _check(self.max_epochs >= 1, f"max_epochs must be >= 1, got {self.max_epochs}")
        _check(0 <= self.early_stop_patience < self.max_epochs,
               f"early_stop_patience ({self.early_stop_patience}) must be below max_epochs ({self.max_epochs})")
        _check(0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0, "Adam betas must be in [0, 1)")
        _check(self.epsilon > 0.0, f"epsilon must be positive, got {self.epsilon}")
        _check(self.dtype in ("float32", "float64"), f"dtype must be float32 or float64, got {self.dtype}")


@dataclass(frozen=True)
class AugmentParams:
    """Intensities of the four augmentation factors."""
    noise_sigma: float = 10.0
    brightness_increase: float = 1.5
    brightness_decrease: float = 0.5
    rotation_degrees: float = 45.0
    seed: int = 0

    def validate(self) -> None:
        _check(self.noise_sigma >= 0.0, f"noise_sigma must be >= 0, got {self.noise_sigma}")
        _check(self.brightness_increase > 0.0 and self.brightness_decrease > 0.0,
               "brightness factors must be positive")
        _check(0.0 <= self.rotation_degrees <= 180.0,
               f"rotation_degrees must be in [0, 180], got {self.rotation_degrees}")


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic tackle-like clip generator settings."""
    count: int = 400
    risky_fraction: float = 0.353
    min_frames: int = 40
    max_frames: int = 120
    height: int = 32
    width: int = 32
    blob_radius: int = 3
    noise_level: float = 8.0
    seed: int = 0

    def validate(self) -> None:
        _check(self.count >= 2, f"count must be >= 2, got {self.count}")
        _check(0.0 < self.risky_fraction < 1.0,
               f"risky_fraction must be in (0, 1), got {self.risky_fraction}")
        _check(3 <= self.min_frames <= self.max_frames,
               f"frame range [{self.min_frames}, {self.max_frames}] is invalid")
        _check(self.height >= 16 and self.width >= 16, "synthetic frames must be at least 16x16")
        _check(1 <= self.blob_radius <= min(self.height, self.width) // 8,
               f"blob_radius {self.blob_radius} does not fit a {self.height}x{self.width} frame")
        _check(self.noise_level >= 0.0, f"noise_level must be >= 0, got {self.noise_level}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a full experiment."""
    output_dir: str = "results"
    manifest_path: Optional[str] = None
    synth: Optional[SynthConfig] = field(default_factory=SynthConfig)
    split_seed: int = SPLIT_SEED
    fold_count: int = FOLD_COUNT
    safe_subset_fraction: float = SAFE_SUBSET_FRACTION
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: FocalLossConfig = field(default_factory=FocalLossConfig)
    augment: AugmentParams = field(default_factory=AugmentParams)
    runs: tuple[str, ...] = ()
    jobs: int = 1
    materialize_clips: bool = False
    save_checkpoints: bool = False
    write_svg: bool = True

    SECTIONS: ClassVar[dict[str, type]] = {
        "model": ModelConfig,
        "train": TrainConfig,
        "loss": FocalLossConfig,
        "augment": AugmentParams,
        "synth": SynthConfig,
    }
    # Fields that do not influence any artifact
    UNHASHED: ClassVar[tuple[str, ...]] = ("jobs", "output_dir")

    def validate(self) -> None:
        """Validate the experiment and every nested section."""
        _check(self.fold_count >= 2, f"fold_count must be >= 2, got {self.fold_count}")
        _check(self.jobs >= 1, f"jobs must be >= 1, got {self.jobs}")
        _check(0.0 <= self.safe_subset_fraction < 1.0,
               f"safe_subset_fraction must be in [0, 1), got {self.safe_subset_fraction}")
        _check(self.manifest_path is not None or self.synth is not None,
               "either manifest_path or a synth section is required")
        for section in (self.model, self.train, self.loss, self.augment):
            section.validate()
        if self.synth is not None:
            self.synth.validate()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        """Build from a parsed JSON document."""
        if not isinstance(data, Mapping):
            raise ConfigurationError("Experiment config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"Unknown experiment keys: {', '.join(unknown)}")

        values = dict(data)
        for name, section_cls in cls.SECTIONS.items():
            if name in values and values[name] is not None:
                values[name] = _build(section_cls, values[name], name)
        if "runs" in values:
            values["runs"] = tuple(values["runs"] or ())
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        """Load a single JSON config document."""
        try:
            data = read_json(path)
        except FileNotFoundError as e:
            raise ConfigurationError(f"Config file not found: {path}") from e
        except ValueError as e:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["runs"] = list(self.runs)
        return data

    def config_hash(self) -> str:
        """Content hash over every field that can change results."""
        data = self.to_dict()
        for name in self.UNHASHED:
            data.pop(name, None)
        return content_hash(data)

    @property
    def artifact_dir(self) -> Path:
        """Output directory addressed by the config hash."""
        return Path(self.output_dir) / f"exp-{self.config_hash()[:12]}"

    def seeds(self) -> dict[str, int]:
        return {
            "split": self.split_seed,
            "augment": self.augment.seed,
            "train": self.train.seed,
            "synth": self.synth.seed if self.synth is not None else None,
        }


def apply_seed_override(config: ExperimentConfig,
                        environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """Replace every seed with TACKLE_SEED when it is set."""
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV_VAR)
    if raw is None or raw.strip() == "":
        return config
    try:
        seed = int(raw)
    except ValueError as e:
        raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from e

    synth = replace(config.synth, seed=seed) if config.synth is not None else None
    return replace(
        config,
        split_seed=seed,
        augment=replace(config.augment, seed=seed),
        train=replace(config.train, seed=seed),
        synth=synth,
    )


def validate_configuration() -> None:
    """Validate the default configuration values."""
    ExperimentConfig().validate()


validate_configuration()
