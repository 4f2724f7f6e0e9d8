"""
Interaction Prior Predictor - boundary branch on top of the global feature.

A cascade of x2 upsampling stages walks from the global stride down to the
image resolution. The stage whose stride matches pyramid level l provides
the boundary-guided feature of level l; a small convolutional head on the last
stage predicts the interaction boundary map.

Boundary targets are the overlap of the dilated hand union and the
dilated object union (square structuring element of side 2r + 1).
"""

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .domain import LH, LO, RH, RO, TO, BoundaryMap, FeatureMap, FeaturePyramid, MaskSet
from .errors import ShapeError, ValidationError
from .layers import ConvBlock, resize
from .losses import binary_cross_entropy

BCE_EPSILON = 1e-7


@dataclass(frozen=True)
class IPPOutput:
    """Boundary probabilities (B, 1, H, W) and boundary-guided features per level."""

    boundary: Tensor
    logits: Tensor
    features: FeaturePyramid

    def boundary_map(self, index: int = 0) -> BoundaryMap:
        return BoundaryMap(self.boundary[index, 0].detach(), mode="probability")


class _UpStage(nn.Sequential):
    def __init__(self, channels: int):
        super().__init__(ConvBlock(channels, channels), ConvBlock(channels, channels))

    def forward(self, x: Tensor) -> Tensor:
        return super().forward(resize(x, (2 * x.shape[-2], 2 * x.shape[-1])))


class InteractionPriorPredictor(nn.Module):
    """
    Boundary branch.

    Args:
        global_channels: Channels of the global feature
        global_stride: Stride of the global feature relative to the image
        strides: Pyramid strides; one boundary-guided feature is exposed per stride
        channels: Width of the boundary-guided features
        head_layers: Convolutions in the boundary head (the last one is 1x1)
    """

    def __init__(
        self,
        global_channels: int,
        global_stride: int,
        strides: list[int],
        channels: int = 16,
        head_layers: int = 2,
    ):
        super().__init__()
        self.global_stride = global_stride
        self.strides = list(strides)
        num_up = int(math.log2(global_stride))

        self.entry = ConvBlock(global_channels, channels)
        self.stages = nn.ModuleList(_UpStage(channels) for _ in range(num_up))
        # Stage k has stride global_stride / 2**k; stage 0 is the entry block.
        self.level_stage = [self._nearest_stage(s) for s in self.strides]

        head: list[nn.Module] = [ConvBlock(channels, channels) for _ in range(head_layers - 1)]
        head.append(nn.Conv2d(channels, 1, kernel_size=1))
        self.head = nn.Sequential(*head)

    def _nearest_stage(self, stride: int) -> int:
        k = round(math.log2(self.global_stride / stride))
        return min(max(k, 0), len(self.stages))

    def forward(
        self,
        global_feat: FeatureMap,
        level_sizes: list[tuple[int, int]] | None = None,
        image_size: tuple[int, int] | None = None,
    ) -> IPPOutput:
        """
        Predict the interaction boundary.

        Args:
            global_feat: Global feature from the encoder
            level_sizes: Pixel-pyramid sizes to align the boundary-guided levels to (default: stride arithmetic)
            image_size: Output size of the boundary map (default: global size x global stride)
        """
        gh, gw = global_feat.size
        full = (gh * self.global_stride, gw * self.global_stride)
        if level_sizes is None:
            level_sizes = [(full[0] // s, full[1] // s) for s in self.strides]
        if len(level_sizes) != len(self.strides):
            raise ShapeError(f"Expected {len(self.strides)} level sizes, got {len(level_sizes)}")

        x = self.entry(global_feat.data)
        stage_outputs = [x]
        for stage in self.stages:
            x = stage(x)
            stage_outputs.append(x)

        features = [
            FeatureMap(resize(stage_outputs[k], size), level=level)
            for level, (k, size) in enumerate(zip(self.level_stage, level_sizes))
        ]

        logits = resize(self.head(x), image_size or full)
        return IPPOutput(
            boundary=torch.sigmoid(logits),
            logits=logits,
            features=FeaturePyramid(features),
        )

    def predict_boundary(self, global_feat: FeatureMap) -> IPPOutput:
        return self.forward(global_feat)


def dilate(mask: Tensor, radius: int) -> Tensor:
    """Binary dilation of (..., H, W) masks with a (2r+1) x (2r+1) square."""
    if radius < 0:
        raise ValidationError(f"Dilation radius must be >= 0, got {radius}")
    if radius == 0:
        return mask.float()
    shape = mask.shape
    x = mask.float().reshape(-1, 1, *shape[-2:])
    x = F.max_pool2d(x, kernel_size=2 * radius + 1, stride=1, padding=radius)
    return x.reshape(shape)


def _boundary_from_masks(masks: Tensor, radius: int) -> Tensor:
    """masks (..., 5, H, W) -> boundary (..., H, W) as float {0, 1}."""
    hands = masks[..., [LH, RH], :, :].amax(dim=-3)
    objects = masks[..., [LO, RO, TO], :, :].amax(dim=-3)
    return dilate(hands, radius) * dilate(objects, radius)


def boundary_gt(masks: MaskSet, dilation_radius: int) -> BoundaryMap:
    """Boundary target: dilate(lh | rh, r) & dilate(lo | ro | to, r)."""
    boundary = _boundary_from_masks(masks.masks.float(), dilation_radius)
    return BoundaryMap(boundary, mode="binary")


def boundary_targets(masks: Tensor, dilation_radius: int) -> Tensor:
    """Batched boundary targets: (B, 5, H, W) float masks -> (B, 1, H, W)."""
    return _boundary_from_masks(masks, dilation_radius).unsqueeze(1)


def boundary_loss(
    pred: BoundaryMap | Tensor,
    gt: BoundaryMap | Tensor,
    eps: float = BCE_EPSILON,
) -> Tensor:
    """Mean per-pixel binary cross-entropy between predicted and target boundary."""
    pred_t = pred.map if isinstance(pred, BoundaryMap) else pred
    gt_t = gt.map if isinstance(gt, BoundaryMap) else gt
    if pred_t.shape != gt_t.shape:
        raise ShapeError(f"Boundary shapes differ: {tuple(pred_t.shape)} vs {tuple(gt_t.shape)}")
    return binary_cross_entropy(pred_t, gt_t.to(pred_t.dtype), eps)
