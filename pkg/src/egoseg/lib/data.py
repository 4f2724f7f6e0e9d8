"""
Data - dataset layout, normalization, cropping and batch sampling.

Layout (one directory per split):

    <root>/<split>/images/<id>.png   RGB
    <root>/<split>/labels/<id>.png   8-bit index image, values 0..5

Samples are ordered by basename. Training batches are a pure function of
(seed, iteration): each epoch is a permutation drawn from
default_rng([seed, epoch]) and every crop/flip from
default_rng([seed, iteration, slot]).
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Literal, Mapping

import numpy as np
import torch
from PIL import Image
from pydantic import BaseModel, Field, field_validator
from torch import Tensor
from torch.utils.data import Dataset, Sampler

from .config import DataConfig
from .domain import CLASS_NAMES, NUM_CLASSES, ImageSample, MaskSet, class_index, masks_to_labels
from .errors import DatasetError, ShapeError, ValidationError

IMAGE_DIR = "images"
LABEL_DIR = "labels"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}

# Horizontal flip swaps handedness: lh <-> rh, lo <-> ro (label values).
FLIP_LABELS = np.array([0, 2, 1, 4, 3, 5], dtype=np.int64)


class DatasetSpec(BaseModel):
    root_path: str
    split: Literal["train", "val", "test"] = "train"
    crop_size: int = Field(64, gt=0)
    mean: tuple[float, float, float] = (106.011, 95.400, 87.429)
    std: tuple[float, float, float] = (64.357, 60.889, 61.419)

    @field_validator("std")
    @classmethod
    def _positive_std(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(s <= 0 for s in v):
            raise ValueError("std components must be positive")
        return v

    @classmethod
    def from_config(cls, data: DataConfig, split: str) -> "DatasetSpec":
        return cls(
            root_path=data.root,
            split=split,
            crop_size=data.crop_size,
            mean=data.mean,
            std=data.std,
        )

    @property
    def split_dir(self) -> Path:
        return Path(self.root_path) / self.split


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def read_rgb(path: Path) -> np.ndarray:
    """(H, W, 3) uint8."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as e:
        raise DatasetError(f"Cannot read image ({e})", path) from e


def read_label_image(path: Path) -> np.ndarray:
    """(H, W) int64 class indices; any value above 5 is rejected naming the file."""
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P", "I", "I;16"):
                raise ValidationError(f"Label image {path} must be single-channel, got mode {img.mode}")
            labels = np.asarray(img, dtype=np.int64)
    except OSError as e:
        raise DatasetError(f"Cannot read label image ({e})", path) from e
    bad = np.unique(labels[(labels < 0) | (labels > NUM_CLASSES)])
    if bad.size:
        raise ValidationError(f"Label image {path} has values {bad.tolist()} outside 0..{NUM_CLASSES}")
    return labels


def write_label_image(labels: Tensor | np.ndarray | MaskSet, path: Path) -> Path:
    """Write an 8-bit index PNG."""
    if isinstance(labels, MaskSet):
        labels = masks_to_labels(labels)
    array = np.asarray(labels)
    if array.ndim != 2:
        raise ShapeError(f"Label map must be (H, W), got {array.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array.astype(np.uint8)).save(path)
    return path


def masks_from_files(paths: Mapping[int | str, Path]) -> MaskSet:
    """Per-class binary mask PNGs (nonzero = inside) -> MaskSet. Missing classes are empty."""
    if not paths:
        raise ValidationError("No mask files given")
    arrays: dict[int, np.ndarray] = {}
    for key, path in paths.items():
        try:
            with Image.open(path) as img:
                arrays[class_index(key)] = np.asarray(img.convert("L")) > 0
        except OSError as e:
            raise DatasetError(f"Cannot read mask ({e})", path) from e

    shapes = {a.shape for a in arrays.values()}
    if len(shapes) != 1:
        raise ShapeError(f"Mask files have different sizes: {sorted(shapes)}")
    (shape,) = shapes
    stack = np.zeros((NUM_CLASSES, *shape), dtype=bool)
    for k, a in arrays.items():
        stack[k] = a
    masks = MaskSet(torch.from_numpy(stack))
    if not masks.is_disjoint():
        overlapping = [CLASS_NAMES[k] for k in arrays]
        raise ValidationError(f"Masks overlap ({', '.join(overlapping)}); labels must be disjoint")
    return masks


@dataclass(frozen=True)
class SamplePaths:
    id: str
    image: Path | None
    label: Path | None

    def require(self) -> tuple[Path, Path]:
        if self.image is None:
            raise DatasetError(f"Missing image for label '{self.id}'", self.label)
        if self.label is None:
            raise DatasetError(f"Missing label for image '{self.id}'", self.image)
        return self.image, self.label


def list_samples(split_dir: Path) -> list[SamplePaths]:
    """All ids found under images/ or labels/, sorted by basename."""
    image_dir, label_dir = split_dir / IMAGE_DIR, split_dir / LABEL_DIR
    if not image_dir.is_dir() and not label_dir.is_dir():
        raise DatasetError("Dataset split not found", split_dir)
    images = (
        {p.stem: p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES}
        if image_dir.is_dir()
        else {}
    )
    labels = {p.stem: p for p in label_dir.glob("*.png")} if label_dir.is_dir() else {}
    return [SamplePaths(i, images.get(i), labels.get(i)) for i in sorted(images.keys() | labels.keys())]


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def normalize(rgb: np.ndarray, mean: tuple[float, ...], std: tuple[float, ...]) -> Tensor:
    """(H, W, 3) uint8 -> (3, H, W) float32, (x - mean) / std per channel."""
    x = (rgb.astype(np.float32) - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))


def _pad_to(pixels: Tensor, labels: Tensor, size: int) -> tuple[Tensor, Tensor]:
    h, w = labels.shape
    ph, pw = max(0, size - h), max(0, size - w)
    if ph == 0 and pw == 0:
        return pixels, labels
    pixels = torch.nn.functional.pad(pixels, (0, pw, 0, ph))
    labels = torch.nn.functional.pad(labels, (0, pw, 0, ph))
    return pixels, labels


def center_crop(pixels: Tensor, labels: Tensor, size: int) -> tuple[Tensor, Tensor]:
    pixels, labels = _pad_to(pixels, labels, size)
    h, w = labels.shape
    top, left = (h - size) // 2, (w - size) // 2
    return pixels[:, top : top + size, left : left + size], labels[top : top + size, left : left + size]


def random_crop(
    pixels: Tensor, labels: Tensor, size: int, rng: np.random.Generator
) -> tuple[Tensor, Tensor]:
    pixels, labels = _pad_to(pixels, labels, size)
    h, w = labels.shape
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return pixels[:, top : top + size, left : left + size], labels[top : top + size, left : left + size]


def flip_sample(pixels: Tensor, labels: Tensor) -> tuple[Tensor, Tensor]:
    """Mirror horizontally and swap handedness of the labels."""
    swapped = torch.from_numpy(FLIP_LABELS)[labels]
    return pixels.flip(-1), swapped.flip(-1)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def load_sample(paths: SamplePaths, spec: DatasetSpec) -> tuple[Tensor, Tensor]:
    """Normalized pixels (3, H, W) and labels (H, W), uncropped."""
    image_path, label_path = paths.require()
    rgb = read_rgb(image_path)
    labels = read_label_image(label_path)
    if rgb.shape[:2] != labels.shape:
        raise ShapeError(f"Image {image_path} is {rgb.shape[:2]} but its label is {labels.shape}")
    return normalize(rgb, spec.mean, spec.std), torch.from_numpy(labels)


def load_dataset(spec: DatasetSpec) -> Iterator[ImageSample]:
    """Yield normalized, center-cropped samples in basename order."""
    for paths in list_samples(spec.split_dir):
        pixels, labels = load_sample(paths, spec)
        pixels, labels = center_crop(pixels, labels, spec.crop_size)
        yield ImageSample(pixels.contiguous(), labels.contiguous(), id=paths.id)


class SegmentationDataset(Dataset):
    """
    Map-style dataset over one split.

    An integer key gives the center-cropped sample. A key (index, seed,
    iteration, slot) gives a randomly cropped (and optionally flipped)
    sample whose randomness depends on that key only.
    """

    def __init__(self, spec: DatasetSpec, random_crop: bool = False, flip: bool = False):
        self.spec = spec
        self.random_crop = random_crop
        self.flip = flip
        self.samples = list_samples(spec.split_dir)
        if not self.samples:
            raise DatasetError("Dataset split is empty", spec.split_dir)

    def __len__(self) -> int:
        return len(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def __getitem__(self, key: int | tuple[int, ...]) -> tuple[Tensor, Tensor]:
        index, rng = (key, None) if isinstance(key, int) else (key[0], np.random.default_rng(list(key[1:])))
        pixels, labels = load_sample(self.samples[index], self.spec)
        size = self.spec.crop_size

        if rng is None:
            pixels, labels = center_crop(pixels, labels, size)
        else:
            if self.random_crop:
                pixels, labels = random_crop(pixels, labels, size, rng)
            else:
                pixels, labels = center_crop(pixels, labels, size)
            if self.flip and rng.random() < 0.5:
                pixels, labels = flip_sample(pixels, labels)
        return pixels.contiguous(), labels.contiguous()

    def sample(self, index: int) -> ImageSample:
        pixels, labels = self[index]
        return ImageSample(pixels, labels, id=self.samples[index].id)


class IterationBatchSampler(Sampler[list[tuple[int, int, int, int]]]):
    """Batches for iterations [start, stop), each keyed by (index, seed, iteration, slot)."""

    def __init__(self, num_samples: int, batch_size: int, seed: int, start: int, stop: int):
        self.num_samples = num_samples
        self.batch_size = batch_size
        self.seed = seed
        self.start = start
        self.stop = stop
        self._perm_epoch = -1
        self._perm = np.arange(num_samples)

    def _permutation(self, epoch: int) -> np.ndarray:
        if epoch != self._perm_epoch:
            self._perm = np.random.default_rng([self.seed, epoch]).permutation(self.num_samples)
            self._perm_epoch = epoch
        return self._perm

    def batch(self, iteration: int) -> list[tuple[int, int, int, int]]:
        keys = []
        for slot in range(self.batch_size):
            position = iteration * self.batch_size + slot
            epoch, offset = divmod(position, self.num_samples)
            keys.append((int(self._permutation(epoch)[offset]), self.seed, iteration, slot))
        return keys

    def __iter__(self) -> Iterator[list[tuple[int, int, int, int]]]:
        for iteration in range(self.start, self.stop):
            yield self.batch(iteration)

    def __len__(self) -> int:
        return max(0, self.stop - self.start)
