"""Configuration dataclasses for the full pipeline.

A RunConfig bundles preprocessing, backbone, sequence-model and training
settings plus paths and the run seed. Configs serialize to/from plain JSON
whose key paths mirror the dataclass fields (e.g. ``seqmodel.num_layers``),
which is also the key syntax used by CLI ``--set`` overrides and ablation
patches.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

BACKBONE_WIDTHS = {"resnet18": 512, "resnet50": 2048}


@dataclass
class PreprocessConfig:
    frames: int = 32
    target_size: int = 224
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    augment: bool = True
    flip_prob: float = 0.5
    jitter_strength: float = 0.1
    rotation_degrees: float = 10.0

    def validate(self):
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        if self.target_size < 1:
            raise ConfigError(f"target_size must be >= 1, got {self.target_size}")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigError("mean and std must be 3-vectors")
        if any(s <= 0 for s in self.std):
            raise ConfigError(f"std components must be > 0, got {self.std}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must be in [0,1], got {self.flip_prob}")
        if not 0.0 <= self.jitter_strength < 1.0:
            raise ConfigError(f"jitter_strength must be in [0,1), got {self.jitter_strength}")
        if self.rotation_degrees < 0:
            raise ConfigError("rotation_degrees must be nonnegative")
        return self


@dataclass
class BackboneConfig:
    variant: str = "resnet18"
    pretrained: bool = True
    weights_path: str | None = None
    freeze: bool = False
    # "mini" is a 2-block stub for desk-scale tests; out width = 2 * mini_width
    mini_width: int = 16
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def validate(self):
        if self.variant not in ("resnet18", "resnet50", "mini"):
            raise ConfigError(f"unknown backbone variant: {self.variant!r}")
        if self.mini_width < 1:
            raise ConfigError("mini_width must be >= 1")
        return self

    @property
    def feature_dim(self) -> int:
        if self.variant == "mini":
            return 2 * self.mini_width
        return BACKBONE_WIDTHS[self.variant]


@dataclass
class SeqModelConfig:
    d_model: int = 256
    num_layers: int = 3
    num_heads: int = 8
    ffn_dim: int = 1024
    lstm_hidden: int = 128
    bidirectional: bool = True
    positional_encoding: bool = True
    num_classes: int = 85
    backbone_width: int = 512
    dropout: float = 0.0

    def validate(self):
        for name in ("d_model", "num_heads", "ffn_dim", "lstm_hidden", "num_classes", "backbone_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_layers < 0:
            raise ConfigError("num_layers must be >= 0")
        if self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by num_heads ({self.num_heads})"
            )
        if self.positional_encoding and self.d_model % 2 != 0:
            raise ConfigError("d_model must be even when positional encoding is enabled")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0,1)")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    @property
    def lstm_out_dim(self) -> int:
        # Unidirectional mode doubles the single direction so downstream
        # widths are unchanged (2 * lstm_hidden either way).
        return 2 * self.lstm_hidden


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 50
    lr0: float = 1e-4
    lr_min: float = 0.0
    weight_decay: float = 1e-2
    patience: int = 10
    seed: int = 0
    schedule: str = "cosine"
    class_weighting: str = "inverse_frequency"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, epochs and patience must be >= 1")
        if self.lr0 <= 0 or self.weight_decay < 0 or self.lr_min < 0:
            raise ConfigError("lr0 must be > 0; weight_decay and lr_min must be >= 0")
        if self.patience > self.epochs:
            raise ConfigError(f"patience ({self.patience}) must be <= epochs ({self.epochs})")
        if self.schedule != "cosine":
            raise ConfigError(f"unknown schedule: {self.schedule!r}")
        if self.class_weighting not in ("inverse_frequency", "uniform"):
            raise ConfigError(f"unknown class_weighting: {self.class_weighting!r}")
        return self


@dataclass
class RunConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    seqmodel: SeqModelConfig = field(default_factory=SeqModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    data_root: str | None = None
    output_dir: str | None = None
    seed: int = 0

    def validate(self):
        self.preprocess.validate()
        self.backbone.validate()
        self.seqmodel.validate()
        self.training.validate()
        if self.seqmodel.backbone_width != self.backbone.feature_dim:
            raise ConfigError(
                f"seqmodel.backbone_width ({self.seqmodel.backbone_width}) does not match "
                f"backbone {self.backbone.variant!r} feature width ({self.backbone.feature_dim})"
            )
        return self

    def resolved(self) -> "RunConfig":
        """Copy with derived fields made consistent: the run seed is pushed
        into training.seed and backbone_width follows the backbone variant."""
        cfg = replace_at(self, "training.seed", self.seed)
        cfg = replace_at(cfg, "seqmodel.backbone_width", cfg.backbone.feature_dim)
        return cfg.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        for key, value in _flatten(data).items():
            cfg = replace_at(cfg, key, value)
        return cfg

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def _flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, dotted + "."))
        else:
            out[dotted] = value
    return out


def _coerce(value, current):
    """Coerce a JSON or CLI string value to the type of the current field value."""
    if isinstance(value, str) and not isinstance(current, str) and current is not None:
        if isinstance(current, bool):
            lowered = value.strip().lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ConfigError(f"cannot parse {value!r} as a boolean")
        try:
            if isinstance(current, int):
                return int(value)
            if isinstance(current, float):
                return float(value)
            if isinstance(current, tuple):
                return tuple(float(v) for v in value.split(","))
        except ValueError as exc:
            raise ConfigError(f"cannot parse {value!r} as {type(current).__name__}") from exc
    if isinstance(current, bool) and isinstance(value, bool):
        return value
    if isinstance(current, int) and isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(current, float) and isinstance(value, int):
        return float(value)
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def dataclass_from_dict(cls, data: dict):
    """Rebuild a config dataclass from a plain dict, coercing JSON types
    (lists to tuples, numeric strings) to the field defaults' types."""
    obj = cls()
    for key, value in data.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown {cls.__name__} field: {key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            value = dataclass_from_dict(type(current), value)
        else:
            value = _coerce(value, current)
        obj = dataclasses.replace(obj, **{key: value})
    return obj


def get_at(cfg: RunConfig, dotted_key: str):
    obj = cfg
    for part in dotted_key.split("."):
        if not hasattr(obj, part):
            raise ConfigError(f"unknown config key: {dotted_key!r}")
        obj = getattr(obj, part)
    return obj


def replace_at(cfg: RunConfig, dotted_key: str, value) -> RunConfig:
    """Return a copy of cfg with the dotted key replaced (pure; cfg is unchanged)."""
    parts = dotted_key.split(".")
    current = get_at(cfg, dotted_key)
    value = _coerce(value, current)

    def rebuild(obj, remaining):
        name = remaining[0]
        if len(remaining) == 1:
            if not dataclasses.is_dataclass(obj):
                raise ConfigError(f"cannot set {dotted_key!r}")
            return dataclasses.replace(obj, **{name: value})
        child = rebuild(getattr(obj, name), remaining[1:])
        return dataclasses.replace(obj, **{name: child})

    return rebuild(cfg, parts)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply a {dotted_key: value} patch, returning a new RunConfig."""
    for key, value in overrides.items():
        cfg = replace_at(cfg, key, value)
    return cfg


def parse_override(text: str) -> tuple[str, str]:
    """Parse a CLI ``key=value`` override string."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, _, value = text.partition("=")
    return key.strip(), value.strip()
