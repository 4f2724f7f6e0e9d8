"""
Configuration - typed settings for every module plus the flat key space.

Settings are pydantic models. Files, presets, environment variables and
command-line overrides are all flat `section.key` maps merged in order:

    defaults < preset/file < EGOSEG_* environment < --set key=value

Environment variables are read after loading a .env file, e.g.
EGOSEG_LOSS__TAU=50 overrides `loss.tau`.
"""

import math
import os
from pathlib import Path
from typing import Any, Literal, Mapping

import pydantic
import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .domain import NUM_CLASSES
from .errors import ConfigError

ENV_PREFIX = "EGOSEG_"

# Key names used in docs and older configs, mapped to their canonical location.
KEY_ALIASES = {
    "boundary.dilation_radius": "ipp.dilation_radius",
}

# Image side the full-scale constants (tau, dilation radius) refer to.
REFERENCE_SIZE = 448

# Matching checkpoints only requires these to agree.
NON_ARCHITECTURE_KEYS = {"ipp.dilation_radius", "decoder.dropout"}
ARCHITECTURE_SECTIONS = ("encoder", "ipp", "dqg", "decoder")


def _is_power_of_two(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EncoderConfig(_Section):
    """Shape contract of the image encoder and pixel decoder."""

    strides: list[int] = Field(default_factory=lambda: [4, 8, 16])
    channels: list[int] = Field(default_factory=lambda: [32, 32, 32])
    global_channels: int = Field(32, ge=1)
    global_stride: int | None = None
    depth: int = Field(1, ge=0)
    attention_layers: int = Field(1, ge=0)
    heads: int = Field(4, ge=1)

    @model_validator(mode="after")
    def _check_shapes(self) -> "EncoderConfig":
        if not self.strides:
            raise ValueError("encoder.strides must not be empty")
        if len(self.strides) != len(self.channels):
            raise ValueError(
                f"encoder.strides ({len(self.strides)}) and encoder.channels "
                f"({len(self.channels)}) must have the same length"
            )
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ValueError(f"encoder.strides must be strictly ascending, got {self.strides}")
        if not all(_is_power_of_two(s) for s in self.strides):
            raise ValueError(f"encoder.strides must be powers of two, got {self.strides}")
        if any(c < 1 for c in self.channels):
            raise ValueError("encoder.channels must be positive")
        if self.global_stride is None:
            self.global_stride = max(self.strides)
        if not _is_power_of_two(self.global_stride) or self.global_stride < max(self.strides):
            raise ValueError(
                f"encoder.global_stride must be a power of two >= {max(self.strides)}, "
                f"got {self.global_stride}"
            )
        if self.global_channels % self.heads:
            raise ValueError("encoder.global_channels must be divisible by encoder.heads")
        return self

    @property
    def num_levels(self) -> int:
        return len(self.strides)

    def global_size(self, image_size: tuple[int, int]) -> tuple[int, int]:
        h, w = image_size
        return (h // self.global_stride, w // self.global_stride)

    def level_sizes(self, image_size: tuple[int, int]) -> list[tuple[int, int]]:
        """Spatial size of every pyramid level for an input of `image_size`."""
        gh, gw = self.global_size(image_size)
        h, w = gh * self.global_stride, gw * self.global_stride
        return [(h // s, w // s) for s in self.strides]


class IPPConfig(_Section):
    """Interaction prior predictor (boundary branch)."""

    enabled: bool = True
    channels: int = Field(16, ge=1)
    head_layers: int = Field(2, ge=1)
    dilation_radius: int | None = Field(None, ge=0)

    def radius_for(self, image_size: int) -> int:
        """Dilation radius; 3 px at 448 scaled to `image_size` when unset."""
        if self.dilation_radius is not None:
            return self.dilation_radius
        return max(1, round(3 * image_size / REFERENCE_SIZE))


class DQGConfig(_Section):
    """Dynamic query generator."""

    enabled: bool = True
    n_partition: int = Field(4, ge=1)
    num_queries: int = Field(NUM_CLASSES, ge=NUM_CLASSES)
    source_level: int = -1
    pad: bool = False


class DecoderConfig(_Section):
    """Query decoder, dual-context feature selector and prediction heads."""

    layers: int = Field(3, ge=1)
    dim: int = Field(32, ge=1)
    heads: int = Field(4, ge=1)
    ffn_dim: int = Field(64, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    dfs: bool = True

    @model_validator(mode="after")
    def _check_heads(self) -> "DecoderConfig":
        if self.dim % self.heads:
            raise ValueError(f"decoder.dim ({self.dim}) must be divisible by decoder.heads ({self.heads})")
        return self


class LossWeights(_Section):
    """Weights of the total objective and the CoCo presence threshold."""

    lambda_b: float = Field(1.0, ge=0.0)
    lambda_co: float = Field(1.0, ge=0.0)
    lambda_cls: float = Field(1.0, ge=0.0)
    lambda_dic: float = Field(5.0, ge=0.0)
    lambda_ce: float = Field(5.0, ge=0.0)
    tau: int = Field(100, ge=1)


class LossConfig(LossWeights):
    normalize_counts: bool = False
    presence_threshold: float = Field(0.5, ge=0.0, le=1.0)


class DataConfig(_Section):
    root: str = "data/synth"
    train_split: str = "train"
    eval_split: str = "val"
    crop_size: int = Field(64, gt=0)
    mean: tuple[float, float, float] = (106.011, 95.400, 87.429)
    std: tuple[float, float, float] = (64.357, 60.889, 61.419)
    random_crop: bool = True
    flip: bool = False
    num_workers: int = Field(0, ge=0)

    @field_validator("std")
    @classmethod
    def _positive_std(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(s <= 0 for s in v):
            raise ValueError("data.std components must be positive")
        return v


class EvalConfig(_Section):
    mask_threshold: float = Field(0.5, ge=0.0, le=1.0)
    illusion_tau: int | None = Field(None, ge=0)
    export_dir: str | None = None

    def presence_threshold(self, train_tau: int, height: int, width: int) -> int:
        """Illusion threshold: explicit value, else the training tau scaled by image area."""
        if self.illusion_tau is not None:
            return self.illusion_tau
        return max(1, math.floor(train_tau * height * width / REFERENCE_SIZE**2))


class TrainConfig(_Section):
    """Top-level run configuration. Module sections are nested."""

    name: str = "run"
    max_iterations: int = Field(180_000, ge=1)
    batch_size: int = Field(8, ge=1)
    warmup_iterations: int = Field(10_000, ge=0)
    peak_lr: float = Field(1e-4, gt=0.0)
    schedule: Literal["poly"] = "poly"
    poly_power: float = Field(1.0, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    checkpoint_every: int = Field(1000, ge=1)
    log_every: int = Field(10, ge=1)
    log_dir: str = "logs"
    deterministic: bool = True
    device: str = "cpu"

    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    ipp: IPPConfig = Field(default_factory=IPPConfig)
    dqg: DQGConfig = Field(default_factory=DQGConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _check_run(self) -> "TrainConfig":
        if self.warmup_iterations >= self.max_iterations:
            raise ValueError("warmup_iterations must be smaller than max_iterations")
        if not self.ipp.enabled and (self.dqg.enabled or self.decoder.dfs):
            raise ValueError("dqg.enabled and decoder.dfs need ipp.enabled (boundary-guided features)")
        if not -self.encoder.num_levels <= self.dqg.source_level < self.encoder.num_levels:
            raise ValueError(f"dqg.source_level {self.dqg.source_level} outside the pyramid")
        return self

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.data.crop_size, self.data.crop_size)


# ---------------------------------------------------------------------------
# Flat key space
# ---------------------------------------------------------------------------


def flatten_mapping(data: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    """Nested dicts -> {'section.key': value}. Already-flat keys pass through."""
    flat: dict[str, Any] = {}
    for key, value in data.items():
        full = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten_mapping(value, f"{full}."))
        else:
            flat[full] = value
    return flat


def unflatten_config(flat: Mapping[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        node = nested
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return nested


def flatten_config(cfg: TrainConfig) -> dict[str, Any]:
    """Flat echo of a config, JSON/YAML friendly."""
    return flatten_mapping(cfg.model_dump(mode="json"))


def known_keys() -> set[str]:
    return set(flatten_config(TrainConfig(max_iterations=2, warmup_iterations=1)))


def canonical_key(key: str) -> str:
    return KEY_ALIASES.get(key, key)


def parse_scalar(text: str) -> Any:
    """Parse a command-line value as YAML, accepting '1e-4' style floats."""
    value = yaml.safe_load(text)
    if isinstance(value, str):
        for cast in (int, float):
            try:
                return cast(value)
            except ValueError:
                continue
    return value


def parse_override(item: str) -> tuple[str, Any]:
    """Parse one `key=value` override."""
    if "=" not in item:
        raise ConfigError(f"Override must look like key=value, got '{item}'")
    key, _, raw = item.partition("=")
    return canonical_key(key.strip()), parse_scalar(raw.strip())


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    """Collect EGOSEG_<SECTION>__<KEY> variables (a .env file is loaded first)."""
    if environ is None:
        load_dotenv()
        environ = os.environ
    overrides = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        overrides[canonical_key(key)] = parse_scalar(raw)
    return overrides


def build_config(*layers: Mapping[str, Any]) -> TrainConfig:
    """Merge flat or nested setting maps (later wins) and validate."""
    merged: dict[str, Any] = {}
    for layer in layers:
        for key, value in flatten_mapping(layer).items():
            merged[canonical_key(key)] = value

    unknown = sorted(set(merged) - known_keys())
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

    try:
        return TrainConfig.model_validate(unflatten_config(merged))
    except pydantic.ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config_file(path: Path) -> dict[str, Any]:
    """Read a YAML config file into a flat settings map."""
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    if not isinstance(data, Mapping):
        raise ConfigError(f"Config file must hold a mapping: {path}")
    return flatten_mapping(data)


def write_config_file(cfg: TrainConfig, path: Path) -> Path:
    """Write the flat config echo as YAML (key order preserved)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        yaml.dump(flatten_config(cfg), default_flow_style=None, sort_keys=False, allow_unicode=True)
    )
    return path


def architecture_signature(cfg: TrainConfig | Mapping[str, Any]) -> dict[str, Any]:
    """The subset of keys a checkpoint's parameters depend on."""
    flat = flatten_config(cfg) if isinstance(cfg, TrainConfig) else dict(cfg)
    signature = {
        k: v
        for k, v in flat.items()
        if k.split(".", 1)[0] in ARCHITECTURE_SECTIONS and k not in NON_ARCHITECTURE_KEYS
    }
    signature["data.crop_size"] = flat.get("data.crop_size")
    return signature
