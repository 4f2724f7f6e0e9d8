"""
Losses - CoCo loss, mask/classification losses and the weighted objective.

Queries are assigned to classes by position: query i predicts class i
(lh, rh, lo, ro, to). Extra queries and queries whose class is absent from
the ground truth are trained towards the no-object column.

CoCo gates come from hard pixel counts (no gradient); the penalties are the
soft object counts, which do carry gradient back into the composed masks.
"""

from dataclasses import dataclass
from typing import Literal

import torch
from torch import Tensor

from .config import LossWeights
from .domain import LH, LO, NUM_CLASSES, RH, RO, TO
from .errors import NonFiniteLossError, ShapeError, ValidationError

NO_OBJECT = NUM_CLASSES
DICE_EPSILON = 1e-6
PROB_EPSILON = 1e-7

COMPONENT_NAMES = ("boundary", "coco", "cls", "dice", "ce")


@dataclass(frozen=True)
class PixelCounts:
    """Per-class pixel counts of composed masks, shape (..., 5)."""

    soft: Tensor
    hard: Tensor

    def __post_init__(self):
        if self.soft.shape != self.hard.shape or self.soft.shape[-1] != NUM_CLASSES:
            raise ShapeError(
                f"Counts must be (..., {NUM_CLASSES}), got soft {tuple(self.soft.shape)} "
                f"and hard {tuple(self.hard.shape)}"
            )

    @classmethod
    def from_values(cls, hard: list[float], soft: list[float] | None = None) -> "PixelCounts":
        """Build counts from plain numbers (soft defaults to the hard counts)."""
        hard_t = torch.as_tensor(hard, dtype=torch.float64)
        soft_t = hard_t.clone() if soft is None else torch.as_tensor(soft, dtype=torch.float64)
        return cls(soft=soft_t, hard=hard_t)

    @property
    def n_lh(self) -> Tensor:
        return self.soft[..., LH]

    @property
    def n_rh(self) -> Tensor:
        return self.soft[..., RH]

    @property
    def n_lo(self) -> Tensor:
        return self.soft[..., LO]

    @property
    def n_ro(self) -> Tensor:
        return self.soft[..., RO]

    @property
    def n_to(self) -> Tensor:
        return self.soft[..., TO]


def pixel_counts(
    composed: Tensor,
    presence_threshold: float = 0.5,
    normalize: bool = False,
) -> PixelCounts:
    """
    Count pixels per class in composed masks of shape (5, H, W) or (B, 5, H, W).

    Hard counts are the number of pixels above `presence_threshold`; soft
    counts are the sum of the values. With `normalize`, soft counts are
    divided by H*W (hard counts stay in pixels so they compare with tau).
    """
    if composed.dim() not in (3, 4) or composed.shape[-3] != NUM_CLASSES:
        raise ShapeError(f"Composed masks must be (..., 5, H, W), got {tuple(composed.shape)}")
    if composed.numel() and (composed.min() < 0 or composed.max() > 1):
        raise ValidationError("Composed mask values must lie in [0, 1]")

    soft = composed.sum(dim=(-2, -1))
    if normalize:
        soft = soft / (composed.shape[-2] * composed.shape[-1])
    hard = (composed.detach() > presence_threshold).sum(dim=(-2, -1)).to(soft.dtype)
    return PixelCounts(soft=soft, hard=hard)


def coco_loss(
    counts: PixelCounts,
    tau: int,
    reduction: Literal["mean", "none"] = "mean",
) -> Tensor:
    """
    Conditional co-occurrence penalty.

    loss = (1 - [n_lh > tau]) * n_lo
         + (1 - [n_rh > tau]) * n_ro
         + (1 - [n_lh > tau and n_rh > tau]) * n_to
    """
    hard = counts.hard.detach()
    left = (hard[..., LH] > tau).to(counts.soft.dtype)
    right = (hard[..., RH] > tau).to(counts.soft.dtype)

    loss = (
        (1 - left) * counts.n_lo
        + (1 - right) * counts.n_ro
        + (1 - left * right) * counts.n_to
    )
    if reduction == "none" or loss.dim() == 0:
        return loss
    return loss.mean()


def _check_same_shape(pred: Tensor, gt: Tensor, what: str):
    if pred.shape != gt.shape:
        raise ShapeError(f"{what}: prediction {tuple(pred.shape)} vs target {tuple(gt.shape)}")


def binary_cross_entropy(pred: Tensor, gt: Tensor, eps: float = PROB_EPSILON) -> Tensor:
    """Mean BCE of probabilities clamped to [eps, 1 - eps]."""
    _check_same_shape(pred, gt, "binary cross-entropy")
    p = pred.clamp(eps, 1 - eps)
    return -(gt * torch.log(p) + (1 - gt) * torch.log(1 - p)).mean()


def dice_loss(pred: Tensor, gt: Tensor, eps: float = DICE_EPSILON) -> Tensor:
    """
    1 - 2 sum(pred * gt) / (sum(pred) + sum(gt) + eps) over the last two dims.

    Leading dims are treated as independent masks and averaged.
    """
    _check_same_shape(pred, gt, "dice loss")
    inter = (pred * gt).sum(dim=(-2, -1))
    total = pred.sum(dim=(-2, -1)) + gt.sum(dim=(-2, -1))
    return (1 - 2 * inter / (total + eps)).mean()


def ce_mask_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Per-pixel BCE between mask probabilities and binary targets."""
    return binary_cross_entropy(pred, gt.to(pred.dtype))


def cls_loss(class_scores: Tensor, target_classes: Tensor) -> Tensor:
    """Categorical cross-entropy over normalized query class rows (..., N, K+1)."""
    if class_scores.shape[:-1] != target_classes.shape:
        raise ShapeError(
            f"class scores {tuple(class_scores.shape)} do not match targets "
            f"{tuple(target_classes.shape)}"
        )
    if target_classes.numel() and (
        target_classes.min() < 0 or target_classes.max() >= class_scores.shape[-1]
    ):
        raise ValidationError("Target class outside the score columns")
    p = class_scores.gather(-1, target_classes.long().unsqueeze(-1)).squeeze(-1)
    return -torch.log(p.clamp_min(PROB_EPSILON)).mean()


def class_targets(gt_masks: Tensor, num_queries: int) -> Tensor:
    """Fixed assignment: query i -> class i if present in the image, else no-object."""
    if gt_masks.dim() != 4 or gt_masks.shape[1] != NUM_CLASSES:
        raise ShapeError(f"gt masks must be (B, 5, H, W), got {tuple(gt_masks.shape)}")
    present = gt_masks.flatten(2).sum(dim=-1) > 0
    classes = torch.arange(NUM_CLASSES, device=gt_masks.device).expand_as(present)
    targets = torch.where(present, classes, torch.full_like(classes, NO_OBJECT))
    extra = torch.full(
        (gt_masks.shape[0], num_queries - NUM_CLASSES), NO_OBJECT, device=gt_masks.device
    )
    return torch.cat([targets, extra], dim=1)


def mask_losses(mask_probs: Tensor, gt_masks: Tensor) -> tuple[Tensor, Tensor]:
    """
    Dice and mask BCE over the (query, class) pairs present in the ground truth.

    mask_probs is (B, N, H, W) with N >= 5; only the first 5 queries carry a class.
    Returns zeros (still attached to the graph) when no class is present.
    """
    probs = mask_probs[:, :NUM_CLASSES]
    _check_same_shape(probs, gt_masks, "mask losses")
    present = gt_masks.flatten(2).sum(dim=-1) > 0
    if not present.any():
        zero = probs.sum() * 0
        return zero, zero
    pred, gt = probs[present], gt_masks[present]
    return dice_loss(pred, gt), ce_mask_loss(pred, gt)


@dataclass(frozen=True)
class LossComponents:
    """Unweighted loss terms of one training step."""

    boundary: Tensor
    coco: Tensor
    cls: Tensor
    dice: Tensor
    ce: Tensor

    @classmethod
    def of(klass, **values: float) -> "LossComponents":
        """Components from plain numbers; missing terms are 0."""
        return klass(**{name: torch.as_tensor(float(values.get(name, 0.0))) for name in COMPONENT_NAMES})

    def as_dict(self) -> dict[str, float]:
        return {name: float(getattr(self, name).detach()) for name in COMPONENT_NAMES}

    def weighted(self, weights: LossWeights) -> dict[str, float]:
        """Each component multiplied by its lambda."""
        return {name: _weight(weights, name) * value for name, value in self.as_dict().items()}


def _weight(weights: LossWeights, name: str) -> float:
    return {
        "boundary": weights.lambda_b,
        "coco": weights.lambda_co,
        "cls": weights.lambda_cls,
        "dice": weights.lambda_dic,
        "ce": weights.lambda_ce,
    }[name]


def total_loss(
    components: LossComponents,
    weights: LossWeights,
    iteration: int = -1,
    lr: float = float("nan"),
) -> Tensor:
    """Weighted sum of the components; a non-finite term aborts with diagnostics."""
    values = components.as_dict()
    if not all(torch.isfinite(torch.tensor(v)) for v in values.values()):
        raise NonFiniteLossError(iteration, lr, values)
    total = sum(_weight(weights, name) * getattr(components, name) for name in COMPONENT_NAMES)
    return torch.as_tensor(total)
