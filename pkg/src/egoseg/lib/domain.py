"""
Domain types - images, masks, boundary maps and feature pyramids.

Class indices are fixed: background 0, then left hand, right hand,
left-hand object, right-hand object, two-hand object (1..5).
Masks are dense; desk-scale images are small.
"""

from dataclasses import dataclass, field
from typing import Iterator, Literal

import torch
from torch import Tensor

from .errors import ShapeError, ValidationError

CLASS_NAMES: tuple[str, ...] = ("lh", "rh", "lo", "ro", "to")
CLASS_TITLES: tuple[str, ...] = (
    "Left hand",
    "Right hand",
    "Left-hand object",
    "Right-hand object",
    "Two-hand object",
)
NUM_CLASSES = len(CLASS_NAMES)
BACKGROUND = 0

LH, RH, LO, RO, TO = range(NUM_CLASSES)


def class_index(k: int | str) -> int:
    """Resolve a class given by name ('lo') or 0-based mask index (2)."""
    if isinstance(k, str):
        if k not in CLASS_NAMES:
            raise ValidationError(f"Unknown class '{k}'. Known: {', '.join(CLASS_NAMES)}")
        return CLASS_NAMES.index(k)
    if not 0 <= k < NUM_CLASSES:
        raise ValidationError(f"Class index {k} outside 0..{NUM_CLASSES - 1}")
    return k


def _check_label_range(label_map: Tensor) -> None:
    if label_map.numel() and (label_map.min() < 0 or label_map.max() > NUM_CLASSES):
        bad = label_map[(label_map < 0) | (label_map > NUM_CLASSES)].unique().tolist()
        raise ValidationError(f"Label values {bad} outside 0..{NUM_CLASSES}")


@dataclass(frozen=True)
class ImageSample:
    """A normalized RGB image with its per-pixel class labels."""

    pixels: Tensor  # (3, H, W) float
    label_map: Tensor  # (H, W) int64
    id: str = ""

    def __post_init__(self):
        if self.pixels.dim() != 3 or self.pixels.shape[0] != 3:
            raise ShapeError(f"pixels must be (3, H, W), got {tuple(self.pixels.shape)}")
        h, w = self.pixels.shape[1:]
        if h == 0 or w == 0:
            raise ShapeError(f"Empty image '{self.id}'")
        if tuple(self.label_map.shape) != (h, w):
            raise ShapeError(
                f"label_map {tuple(self.label_map.shape)} does not match pixels {(h, w)}"
            )
        _check_label_range(self.label_map)

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class MaskSet:
    """Binary masks for (lh, rh, lo, ro, to), stored as a (5, H, W) bool tensor."""

    masks: Tensor

    def __post_init__(self):
        if self.masks.dim() != 3 or self.masks.shape[0] != NUM_CLASSES:
            raise ShapeError(f"masks must be ({NUM_CLASSES}, H, W), got {tuple(self.masks.shape)}")
        if self.masks.dtype != torch.bool:
            if ((self.masks != 0) & (self.masks != 1)).any():
                raise ValidationError("Mask entries must be 0 or 1")
            object.__setattr__(self, "masks", self.masks.bool())

    @classmethod
    def empty(cls, height: int, width: int) -> "MaskSet":
        return cls(torch.zeros(NUM_CLASSES, height, width, dtype=torch.bool))

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.masks.shape[1:])

    def __getitem__(self, k: int | str) -> Tensor:
        return self.masks[class_index(k)]

    def counts(self) -> list[int]:
        """Pixel count per class."""
        return self.masks.flatten(1).sum(dim=1).tolist()

    def is_disjoint(self) -> bool:
        return bool((self.masks.sum(dim=0) <= 1).all())


@dataclass(frozen=True)
class BoundaryMap:
    """Interaction boundary, either predicted probabilities or a binary target."""

    map: Tensor  # (H, W)
    mode: Literal["probability", "binary"] = "probability"

    def __post_init__(self):
        if self.map.dim() != 2:
            raise ShapeError(f"Boundary map must be (H, W), got {tuple(self.map.shape)}")
        if self.mode == "binary":
            if ((self.map != 0) & (self.map != 1)).any():
                raise ValidationError("Binary boundary map must hold only 0 and 1")
        elif self.mode == "probability":
            if self.map.numel() and (self.map.min() < 0 or self.map.max() > 1):
                raise ValidationError("Boundary probabilities must lie in [0, 1]")
        else:
            raise ValidationError(f"Unknown boundary mode '{self.mode}'")


@dataclass(frozen=True)
class FeatureMap:
    """A batched, channels-first feature tensor (B, C, H, W) at one pyramid level."""

    data: Tensor
    level: int = 0

    def __post_init__(self):
        if self.data.dim() != 4:
            raise ShapeError(f"FeatureMap data must be (B, C, H, W), got {tuple(self.data.shape)}")

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def size(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class FeaturePyramid:
    """Feature maps ordered finest first; each level is coarser than or equal to the last."""

    levels: list[FeatureMap] = field(default_factory=list)

    def __post_init__(self):
        for prev, cur in zip(self.levels, self.levels[1:]):
            if cur.height > prev.height or cur.width > prev.width:
                raise ShapeError(
                    f"Pyramid level {cur.level} {cur.size} is finer than level {prev.level} {prev.size}"
                )

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, index: int) -> FeatureMap:
        return self.levels[index]

    def __iter__(self) -> Iterator[FeatureMap]:
        return iter(self.levels)

    @property
    def sizes(self) -> list[tuple[int, int]]:
        return [level.size for level in self.levels]


def labels_to_masks(label_map: Tensor) -> MaskSet:
    """Split an (H, W) label map into one binary mask per foreground class."""
    if label_map.dim() != 2:
        raise ShapeError(f"label_map must be (H, W), got {tuple(label_map.shape)}")
    _check_label_range(label_map)
    classes = torch.arange(1, NUM_CLASSES + 1, device=label_map.device).view(-1, 1, 1)
    return MaskSet(label_map.unsqueeze(0) == classes)


def masks_to_labels(m: MaskSet) -> Tensor:
    """Inverse of labels_to_masks. Overlapping masks are rejected."""
    if not m.is_disjoint():
        raise ValidationError("Masks overlap; cannot build a label map")
    classes = torch.arange(1, NUM_CLASSES + 1, device=m.masks.device).view(-1, 1, 1)
    return (m.masks.long() * classes).sum(dim=0)


def batch_labels_to_masks(label_maps: Tensor) -> Tensor:
    """(B, H, W) label maps -> (B, 5, H, W) float masks, for loss computation."""
    _check_label_range(label_maps)
    classes = torch.arange(1, NUM_CLASSES + 1, device=label_maps.device).view(1, -1, 1, 1)
    return (label_maps.unsqueeze(1) == classes).float()
