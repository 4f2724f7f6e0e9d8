"""
Checkpoints - versioned parameter blobs with a plain-text config echo.

    <checkpoint_dir>/iter_0003000.pt     torch.save blob
    <checkpoint_dir>/iter_0003000.yaml   flat config echo
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch

from .config import TrainConfig, architecture_signature, build_config, flatten_config, write_config_file
from .errors import CheckpointError, CheckpointVersionError

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    iteration: int
    config: dict[str, Any]
    model_state: dict[str, torch.Tensor]
    optimizer_state: dict[str, Any] | None = None
    rng_state: torch.Tensor | None = None
    format_version: int = FORMAT_VERSION
    path: Path | None = field(default=None, compare=False)

    def train_config(self) -> TrainConfig:
        return build_config(self.config)

    def to_blob(self) -> dict[str, Any]:
        return {
            "format_version": self.format_version,
            "iteration": self.iteration,
            "config": self.config,
            "model_state": self.model_state,
            "optimizer_state": self.optimizer_state,
            "rng_state": self.rng_state,
        }

    def save(self, path: Path) -> Path:
        """Write the blob and a YAML config echo next to it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.to_blob(), path)
        write_config_file(self.train_config(), path.with_suffix(".yaml"))
        self.path = path
        return path


def checkpoint_name(iteration: int) -> str:
    return f"iter_{iteration:07d}.pt"


def latest_checkpoint(directory: Path) -> Path | None:
    candidates = sorted(Path(directory).glob("iter_*.pt"))
    return candidates[-1] if candidates else None


def load_checkpoint(path: Path, expected_config: TrainConfig | None = None) -> Checkpoint:
    """
    Read a checkpoint and check its format version.

    With `expected_config`, the architecture keys (encoder, ipp, dqg,
    decoder, crop size) must match those stored in the checkpoint.
    """
    path = Path(path)
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as e:
        raise CheckpointError(f"Checkpoint not found: {path}") from e
    except Exception as e:  # torch raises several unrelated types for corrupt files
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    if not isinstance(blob, dict) or "format_version" not in blob:
        raise CheckpointVersionError(f"{path} is not an egoseg checkpoint")
    if blob["format_version"] != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path} has format version {blob['format_version']}, expected {FORMAT_VERSION}"
        )

    ckpt = Checkpoint(
        iteration=blob["iteration"],
        config=blob["config"],
        model_state=blob["model_state"],
        optimizer_state=blob.get("optimizer_state"),
        rng_state=blob.get("rng_state"),
        format_version=blob["format_version"],
        path=path,
    )
    if expected_config is not None:
        check_compatible(ckpt, expected_config)
    return ckpt


def check_compatible(ckpt: Checkpoint, cfg: TrainConfig):
    stored = architecture_signature(ckpt.config)
    expected = architecture_signature(flatten_config(cfg))
    mismatched = sorted(k for k in expected.keys() | stored.keys() if expected.get(k) != stored.get(k))
    if mismatched:
        details = ", ".join(f"{k}: {stored.get(k)!r} != {expected.get(k)!r}" for k in mismatched)
        raise CheckpointVersionError(f"Checkpoint does not match the config ({details})")
