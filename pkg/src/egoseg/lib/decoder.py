"""
Decoder - dual-context feature selection, query refinement and prediction heads.

For decoder layer l the Dual-context Feature Selector fuses pixel level
l mod L with the boundary-guided feature of the same level:

    pixel, boundary -> 1x1 conv to dim, flatten      (pix, bnd)
    K, V            =  conv1d(pos + pix)
    Q               =  conv1d(norm(bnd))
    cross           =  softmax(Q K^T / sqrt(dim)) V
    g               =  norm(dropout(cross))
    fused           =  pix + norm(self_attn(g) + g)

The decoder layer lets the queries attend to the fused memory, then to each other,
then runs a feed-forward block (pre-norm residuals throughout).
"""

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .domain import BACKGROUND, NUM_CLASSES, FeatureMap, MaskSet, labels_to_masks
from .errors import ShapeError
from .layers import MLP, FeedForward, MultiHeadAttention, attention, resize, to_tokens


@dataclass(frozen=True)
class DFSTrace:
    """Intermediate tensors of one dual-context fusion (for inspection and tests)."""

    q: Tensor
    k: Tensor
    v: Tensor
    weights: Tensor
    cross: Tensor
    self_weights: Tensor


class DualContextFeatureSelector(nn.Module):
    """
    Fuses one pixel level with its boundary-guided counterpart into a fused memory (B, h*w, dim).

    Args:
        pixel_channels: Channels of the pixel level
        boundary_channels: Channels of the boundary-guided level
        dim: Decoder width
        size: (h, w) of the level; fixes the positional parameter T
        heads: Heads of the self-attention over the cross-context feature
        dropout: Dropout on the cross-context feature and inside the self-attention
    """

    def __init__(
        self,
        pixel_channels: int,
        boundary_channels: int,
        dim: int,
        size: tuple[int, int],
        heads: int = 4,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.dim = dim
        self.size = tuple(size)

        self.proj_pix = nn.Conv2d(pixel_channels, dim, kernel_size=1)
        self.proj_int = nn.Conv2d(boundary_channels, dim, kernel_size=1)
        self.pos = nn.Parameter(torch.empty(size[0] * size[1], dim))
        nn.init.trunc_normal_(self.pos, std=0.02)

        self.norm_q = nn.LayerNorm(dim)
        self.q_conv = nn.Conv1d(dim, dim, kernel_size=1)
        self.k_conv = nn.Conv1d(dim, dim, kernel_size=1)
        self.v_conv = nn.Conv1d(dim, dim, kernel_size=1)

        self.dropout = nn.Dropout(dropout)
        self.norm_cos = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, dropout)
        self.norm_out = nn.LayerNorm(dim)

    @staticmethod
    def _conv1d(conv: nn.Conv1d, tokens: Tensor) -> Tensor:
        return conv(tokens.transpose(1, 2)).transpose(1, 2)

    def _check(self, f_pix: FeatureMap, f_int: FeatureMap | None):
        if f_pix.size != self.size:
            raise ShapeError(f"Pixel feature {f_pix.size} does not match selector size {self.size}")
        if f_int is not None:
            if f_int.size != f_pix.size or f_int.data.shape[0] != f_pix.data.shape[0]:
                raise ShapeError(
                    f"Boundary feature {tuple(f_int.data.shape)} does not match "
                    f"pixel feature {tuple(f_pix.data.shape)}"
                )

    def forward(
        self,
        f_pix: FeatureMap,
        f_int: FeatureMap,
        return_trace: bool = False,
    ) -> Tensor | tuple[Tensor, DFSTrace]:
        self._check(f_pix, f_int)
        pix = to_tokens(self.proj_pix(f_pix.data))
        bnd = to_tokens(self.proj_int(f_int.data))

        k = self._conv1d(self.k_conv, pix + self.pos)
        v = self._conv1d(self.v_conv, pix + self.pos)
        q = self._conv1d(self.q_conv, self.norm_q(bnd))

        cross, weights = attention(q, k, v)
        g = self.norm_cos(self.dropout(cross))
        refined, self_weights = self.self_attn(g, g, g)
        fused = pix + self.norm_out(refined + g)

        if return_trace:
            return fused, DFSTrace(q, k, v, weights, cross, self_weights)
        return fused


class PixelMemory(nn.Module):
    """Decoder memory without boundary context: projected pixel tokens plus T."""

    def __init__(self, pixel_channels: int, dim: int, size: tuple[int, int]):
        super().__init__()
        self.size = tuple(size)
        self.proj_pix = nn.Conv2d(pixel_channels, dim, kernel_size=1)
        self.pos = nn.Parameter(torch.empty(size[0] * size[1], dim))
        nn.init.trunc_normal_(self.pos, std=0.02)

    def forward(self, f_pix: FeatureMap, f_int: FeatureMap | None = None, return_trace: bool = False):
        if f_pix.size != self.size:
            raise ShapeError(f"Pixel feature {f_pix.size} does not match memory size {self.size}")
        memory = to_tokens(self.proj_pix(f_pix.data)) + self.pos
        return (memory, None) if return_trace else memory


@dataclass(frozen=True)
class LayerAttention:
    cross_weights: Tensor  # (B, heads, N, h*w)
    self_weights: Tensor  # (B, heads, N, N)


class DecoderLayer(nn.Module):
    """Cross-attention to the fused memory, self-attention, feed-forward; pre-norm residuals."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.dim = dim
        self.norm_cross = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, dropout)
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, dropout)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self,
        queries: Tensor,
        memory: Tensor,
        return_attention: bool = False,
    ) -> Tensor | tuple[Tensor, LayerAttention]:
        if queries.dim() != 3 or memory.dim() != 3:
            raise ShapeError("Queries and memory must be (B, N, dim) token tensors")
        if queries.shape[-1] != self.dim or memory.shape[-1] != self.dim:
            raise ShapeError(
                f"Expected width {self.dim}, got queries {queries.shape[-1]} "
                f"and memory {memory.shape[-1]}"
            )
        if queries.shape[0] != memory.shape[0]:
            raise ShapeError("Queries and memory have different batch sizes")

        h = self.norm_cross(queries)
        out, cross_w = self.cross_attn(h, memory, memory)
        queries = queries + self.dropout(out)

        h = self.norm_self(queries)
        out, self_w = self.self_attn(h, h, h)
        queries = queries + self.dropout(out)

        queries = queries + self.dropout(self.ffn(self.norm_ffn(queries)))
        if return_attention:
            return queries, LayerAttention(cross_weights=cross_w, self_weights=self_w)
        return queries


def compose_masks(class_scores: Tensor, mask_logits: Tensor) -> Tensor:
    """
    M[k] = sum_i C[i, k] * sigmoid(M_C[i]) for the K foreground classes.

    When the queries put a total mass above 1 on a class, its sum is divided
    by that mass, so M stays in [0, 1].
    """
    if class_scores.shape[:-1] != mask_logits.shape[:-2]:
        raise ShapeError(
            f"Class scores {tuple(class_scores.shape)} and mask logits "
            f"{tuple(mask_logits.shape)} disagree on the query axis"
        )
    weights = class_scores[..., :NUM_CLASSES]
    composed = torch.einsum("...qk,...qhw->...khw", weights, mask_logits.sigmoid())
    mass = weights.sum(dim=-2).clamp_min(1.0)
    return (composed / mass[..., None, None]).clamp(0.0, 1.0)


def labels_from_composed(composed: Tensor, threshold: float = 0.5) -> Tensor:
    """Per-pixel argmax class (1..5), background where the maximum is <= threshold."""
    best, index = composed.max(dim=-3)
    return torch.where(best > threshold, index + 1, torch.full_like(index, BACKGROUND))


@dataclass(frozen=True)
class SegmentationOutput:
    """Class scores (B, N, K+1), mask logits (B, N, H, W) and composed masks (B, K, H, W)."""

    class_scores: Tensor
    mask_logits: Tensor
    composed: Tensor

    def label_map(self, index: int = 0, threshold: float = 0.5) -> Tensor:
        return labels_from_composed(self.composed[index].detach(), threshold)

    def mask_set(self, index: int = 0, threshold: float = 0.5) -> MaskSet:
        return labels_to_masks(self.label_map(index, threshold))


class PredictionHeads(nn.Module):
    """Class head (softmax over K+1) and mask embedding for per-query masks."""

    def __init__(self, dim: int, num_classes: int = NUM_CLASSES):
        super().__init__()
        self.decoder_norm = nn.LayerNorm(dim)
        self.class_embed = nn.Linear(dim, num_classes + 1)
        self.mask_embed = MLP(dim, dim, dim, 3)

    def forward(
        self,
        queries: Tensor,
        mask_feature: FeatureMap,
        output_size: tuple[int, int] | None = None,
    ) -> SegmentationOutput:
        if queries.shape[-1] != mask_feature.channels:
            raise ShapeError(
                f"Query width {queries.shape[-1]} does not match mask feature "
                f"channels {mask_feature.channels}"
            )
        q = self.decoder_norm(queries)
        class_scores = self.class_embed(q).softmax(dim=-1)
        mask_logits = torch.einsum("bqc,bchw->bqhw", self.mask_embed(q), mask_feature.data)
        if output_size is not None:
            mask_logits = resize(mask_logits, output_size)
        return SegmentationOutput(
            class_scores=class_scores,
            mask_logits=mask_logits,
            composed=compose_masks(class_scores, mask_logits),
        )
