"""
Synthetic desk-scale dataset generator.

Each scene has up to two hands (an arm entering from the bottom edge plus
a round palm, left hand in the left half, right hand in the right half)
and objects drawn underneath them. Object labels are never chosen directly:
they are derived from contact in the rendered geometry (an object touching
only the left hand is lo, only the right hand ro, both to, none background),
so the ground truth always respects hand/object causality.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image
from pydantic import BaseModel, Field

from .data import IMAGE_DIR, LABEL_DIR, write_label_image
from .domain import CLASS_NAMES, NUM_CLASSES
from .errors import ValidationError

MIN_SIZE = 32

LEFT_HAND_COLOR = (222, 172, 140)
RIGHT_HAND_COLOR = (140, 96, 70)
OBJECT_COLORS = [
    (40, 110, 200),
    (210, 60, 50),
    (60, 170, 80),
    (230, 200, 40),
    (150, 70, 170),
    (30, 170, 170),
]

# Label values
_LH, _RH, _LO, _RO, _TO = range(1, NUM_CLASSES + 1)


class SynthSpec(BaseModel):
    seed: int = Field(0, ge=0)
    count: int = Field(2000, gt=0)
    size: int = 64
    p_left: float = Field(0.8, ge=0.0, le=1.0)
    p_right: float = Field(0.8, ge=0.0, le=1.0)
    p_object: float = Field(0.8, ge=0.0, le=1.0)
    p_distractor: float = Field(0.3, ge=0.0, le=1.0)
    out_dir: str = "data/synth"
    split: str = "train"


@dataclass
class SynthScene:
    """One rendered scene plus the geometry needed to re-derive its labels."""

    image: np.ndarray  # (H, W, 3) uint8
    labels: np.ndarray  # (H, W) uint8
    left_hand: np.ndarray  # bool
    right_hand: np.ndarray  # bool
    objects: list[np.ndarray] = field(default_factory=list)  # visible object pixels
    object_labels: list[int] = field(default_factory=list)


def _disk(shape: tuple[int, int], cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _rect(shape: tuple[int, int], y0: float, y1: float, x0: float, x1: float) -> np.ndarray:
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    return (yy >= y0) & (yy <= y1) & (xx >= x0) & (xx <= x1)


def _grow(mask: np.ndarray) -> np.ndarray:
    """One-pixel 8-neighbour dilation."""
    padded = np.pad(mask, 1)
    h, w = mask.shape
    out = np.zeros_like(mask)
    for dy in range(3):
        for dx in range(3):
            out |= padded[dy : dy + h, dx : dx + w]
    return out


def touches(a: np.ndarray, b: np.ndarray) -> bool:
    """True if the masks overlap or are 8-adjacent."""
    return bool((_grow(a) & b).any())


def contact_label(obj: np.ndarray, left: np.ndarray, right: np.ndarray) -> int:
    """Label value an object gets from the hands it touches (0 = background)."""
    on_left, on_right = touches(obj, left), touches(obj, right)
    if on_left and on_right:
        return _TO
    if on_left:
        return _LO
    if on_right:
        return _RO
    return 0


def _hand(shape: tuple[int, int], rng: np.random.Generator, side: str) -> tuple[np.ndarray, tuple[float, float]]:
    s = shape[0]
    r = max(3.0, s / 10)
    lo, hi = (0.15, 0.35) if side == "left" else (0.65, 0.85)
    cx = rng.uniform(lo, hi) * s
    cy = rng.uniform(0.5, 0.7) * s
    palm = _disk(shape, cy, cx, r)
    arm = _rect(shape, cy, s - 1, cx - r / 2, cx + r / 2)
    return palm | arm, (cy, cx)


def _object_near(shape, rng, palm: tuple[float, float]) -> np.ndarray:
    s = shape[0]
    r_palm = max(3.0, s / 10)
    cy, cx = palm
    r = rng.uniform(0.8, 1.3) * r_palm
    dx = rng.uniform(-0.3, 0.3) * r_palm
    if rng.random() < 0.5:
        return _disk(shape, cy - r_palm, cx + dx, r)
    return _rect(shape, cy - r_palm - r, cy - r_palm + r / 2, cx + dx - r, cx + dx + r)


def _bridge(shape, rng, left: tuple[float, float], right: tuple[float, float]) -> np.ndarray:
    r_palm = max(3.0, shape[0] / 10)
    top = min(left[0], right[0]) - r_palm * rng.uniform(0.8, 1.2)
    bottom = max(left[0], right[0]) - 0.3 * r_palm
    return _rect(shape, top, bottom, left[1], right[1])


def _distractor(shape, rng, occupied: np.ndarray, tries: int = 10) -> np.ndarray | None:
    s = shape[0]
    for _ in range(tries):
        r = rng.uniform(0.04, 0.08) * s
        blob = _disk(shape, rng.uniform(0.05, 0.22) * s, rng.uniform(0.1, 0.9) * s, r)
        if blob.any() and not touches(blob, occupied):
            return blob
    return None


def render_scene(spec: SynthSpec, index: int) -> SynthScene:
    """Render scene `index`; depends only on (spec.seed, index) and the SynthSpec probabilities."""
    if spec.size < MIN_SIZE:
        raise ValidationError(f"Synthetic images need size >= {MIN_SIZE}, got {spec.size}")
    rng = np.random.default_rng([spec.seed, index])
    shape = (spec.size, spec.size)

    background = rng.integers(30, 90, size=3)
    image = np.broadcast_to(background, (*shape, 3)).astype(np.int16).copy()
    image += rng.integers(-6, 7, size=(*shape, 3), dtype=np.int16)

    has_left = rng.random() < spec.p_left
    has_right = rng.random() < spec.p_right
    empty = np.zeros(shape, dtype=bool)
    left, left_palm = _hand(shape, rng, "left") if has_left else (empty, None)
    right, right_palm = _hand(shape, rng, "right") if has_right else (empty, None)

    shapes: list[np.ndarray] = []
    if rng.random() < spec.p_object:
        choices = []
        if left_palm is not None:
            choices.append("left")
        if right_palm is not None:
            choices.append("right")
        if left_palm is not None and right_palm is not None:
            choices.append("both")
        if choices:
            kind = choices[int(rng.integers(len(choices)))]
            if kind == "left":
                shapes.append(_object_near(shape, rng, left_palm))
            elif kind == "right":
                shapes.append(_object_near(shape, rng, right_palm))
            else:
                shapes.append(_bridge(shape, rng, left_palm, right_palm))

    if rng.random() < spec.p_distractor:
        occupied = left | right
        for s in shapes:
            occupied = occupied | s
        blob = _distractor(shape, rng, occupied)
        if blob is not None:
            shapes.append(blob)

    hands = left | right
    labels = np.zeros(shape, dtype=np.uint8)
    objects, object_labels = [], []
    for s in shapes:
        color = OBJECT_COLORS[int(rng.integers(len(OBJECT_COLORS)))]
        image[s] = color
        visible = s & ~hands
        label = contact_label(visible, left, right)
        labels[visible] = label
        objects.append(visible)
        object_labels.append(label)

    image[left] = LEFT_HAND_COLOR
    image[right] = RIGHT_HAND_COLOR
    labels[left] = _LH
    labels[right] = _RH

    return SynthScene(
        image=np.clip(image, 0, 255).astype(np.uint8),
        labels=labels,
        left_hand=left,
        right_hand=right,
        objects=objects,
        object_labels=object_labels,
    )


def synth_generate(spec: SynthSpec) -> Path:
    """Write `count` scenes as <out_dir>/<split>/{images,labels}/NNNNN.png plus synth.yaml."""
    if spec.size < MIN_SIZE:
        raise ValidationError(f"Synthetic images need size >= {MIN_SIZE}, got {spec.size}")
    split_dir = Path(spec.out_dir) / spec.split
    (split_dir / IMAGE_DIR).mkdir(parents=True, exist_ok=True)

    class_counts = dict.fromkeys(CLASS_NAMES, 0)
    width = max(5, len(str(spec.count - 1)))
    for index in range(spec.count):
        scene = render_scene(spec, index)
        name = f"{index:0{width}d}.png"
        Image.fromarray(scene.image).save(split_dir / IMAGE_DIR / name)
        write_label_image(scene.labels, split_dir / LABEL_DIR / name)
        for value in np.unique(scene.labels):
            if value:
                class_counts[CLASS_NAMES[value - 1]] += 1

    echo = {"spec": spec.model_dump(), "images_with_class": class_counts}
    (split_dir / "synth.yaml").write_text(yaml.dump(echo, sort_keys=False))
    return split_dir
