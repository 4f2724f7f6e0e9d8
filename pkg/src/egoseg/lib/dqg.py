"""
Dynamic Query Generator - interaction-aware query initialization.

The coarsest boundary-guided feature is projected to the pixel
feature width and shrunk to one tile of an n x n partition of the matching pixel level.
Every tile of that pixel level is compared position by position against that tile
(cosine similarity), giving a dense map S. The N pixel features with the
highest S become the selected queries Q_v; adding the learnable queries
gives the decoder input Q = Q_v + Q_learn.

Selection is a hard top-N with row-major tie-break. The indices are
constants for autograd; gradient reaches the gathered pixel features and
the learnable queries. The alignment projection only feeds the selection,
so it is a fixed random projection inside the generator: its weights are
frozen at initialization and ranking adapts through the trained
boundary-guided features instead.
"""

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .domain import FeatureMap
from .errors import ShapeError, ValidationError
from .layers import MLP, resize, to_tokens


@dataclass(frozen=True)
class SimilarityMap:
    """Cosine similarity per pixel position, (B, H, W) in [-1, 1]."""

    values: Tensor
    partition: int

    def __post_init__(self):
        if self.values.dim() != 3:
            raise ShapeError(f"Similarity values must be (B, H, W), got {tuple(self.values.shape)}")
        if self.values.numel() and (self.values.min() < -1 or self.values.max() > 1):
            raise ValidationError("Similarity values must lie in [-1, 1]")


@dataclass(frozen=True)
class QuerySet:
    """Selected, learnable and fused queries, each (B, N, C), plus (B, N, 2) positions."""

    selected: Tensor
    learnable: Tensor
    fused: Tensor
    positions: Tensor
    similarity: SimilarityMap | None = None

    @property
    def num_queries(self) -> int:
        return self.fused.shape[-2]


def _partitioned_size(size: tuple[int, int], n: int, pad: bool) -> tuple[int, int]:
    h, w = size
    if h < n or w < n:
        raise ShapeError(f"Feature {h}x{w} is smaller than the {n}x{n} partition")
    if pad:
        return (math.ceil(h / n) * n, math.ceil(w / n) * n)
    return (h, w)


def align_boundary_feature(
    f_int: FeatureMap,
    projection: nn.Module,
    n: int,
    target_size: tuple[int, int] | None = None,
    pad: bool = False,
) -> FeatureMap:
    """
    Project the boundary-guided feature to the pixel width and resize it to one partition tile.

    Args:
        f_int: Boundary-guided feature (B, C_b, H, W)
        projection: Channel map C_b -> C applied at every position
        n: Tiles per axis
        target_size: Spatial size of the pixel feature to partition (default: f_int's)
        pad: Round the pixel feature size up to a multiple of n
    """
    if n < 1:
        raise ValidationError(f"Partition must be >= 1, got {n}")
    h, w = _partitioned_size(target_size or f_int.size, n, pad)
    x = projection(f_int.data.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
    return FeatureMap(resize(x, (h // n, w // n)), level=f_int.level)


def similarity_map(
    f_pix: FeatureMap,
    f_int_aligned: FeatureMap,
    n: int,
    pad: bool = False,
) -> SimilarityMap:
    """
    S[i*h + u, j*w + v] = cos(boundary[u, v], pixel[i*h + u, j*w + v]).

    Zero vectors have similarity 0. With `pad`, the pixel feature is
    zero-padded to a multiple of n and S is cropped back, so padded
    positions never appear in S.
    """
    h, w = f_pix.size
    ph, pw = _partitioned_size((h, w), n, pad)
    if (ph % n or pw % n) and not pad:
        raise ShapeError(f"Feature {h}x{w} does not split into {n}x{n} tiles (enable dqg.pad)")
    if f_int_aligned.size != (ph // n, pw // n):
        raise ShapeError(
            f"Aligned boundary feature {f_int_aligned.size} does not match a tile "
            f"of {(ph, pw)} split {n}x{n}"
        )
    if f_int_aligned.channels != f_pix.channels:
        raise ShapeError(
            f"Channel mismatch: pixel {f_pix.channels} vs boundary {f_int_aligned.channels}"
        )

    pix = F.pad(f_pix.data, (0, pw - w, 0, ph - h))
    tiled = f_int_aligned.data.repeat(1, 1, n, n)

    dot = (pix * tiled).sum(dim=1)
    denom = pix.norm(dim=1) * tiled.norm(dim=1)
    nonzero = denom > 0
    cos = torch.where(nonzero, dot / torch.where(nonzero, denom, torch.ones_like(denom)), 0.0)
    return SimilarityMap(cos.clamp(-1, 1)[:, :h, :w], partition=n)


def select_queries(s: SimilarityMap, f_pix: FeatureMap, num_queries: int) -> tuple[Tensor, Tensor]:
    """
    Gather the pixel features at the N highest similarity positions.

    Returns (features (B, N, C), positions (B, N, 2) as (row, col)).
    Ties are broken by row-major order, smaller index first.
    """
    b, h, w = s.values.shape
    if f_pix.size != (h, w):
        raise ShapeError(f"Similarity map {(h, w)} does not match pixel feature {f_pix.size}")
    if num_queries > h * w:
        raise ValidationError(f"Cannot select {num_queries} queries from {h * w} positions")

    flat = s.values.detach().reshape(b, h * w)
    index = torch.sort(-flat, dim=1, stable=True).indices[:, :num_queries]

    tokens = to_tokens(f_pix.data)
    selected = tokens.gather(1, index.unsqueeze(-1).expand(-1, -1, tokens.shape[-1]))
    positions = torch.stack([index // w, index % w], dim=-1)
    return selected, positions


def make_queries(
    selected: Tensor,
    learnable: Tensor,
    positions: Tensor | None = None,
    similarity: SimilarityMap | None = None,
) -> QuerySet:
    """Q = Q_v + Q_learn; all parts are kept for inspection."""
    if selected.shape != learnable.shape:
        raise ShapeError(
            f"Selected {tuple(selected.shape)} and learnable {tuple(learnable.shape)} queries differ"
        )
    if positions is None:
        positions = torch.zeros(*selected.shape[:-1], 2, dtype=torch.long, device=selected.device)
    return QuerySet(
        selected=selected,
        learnable=learnable,
        fused=selected + learnable,
        positions=positions,
        similarity=similarity,
    )


class DynamicQueryGenerator(nn.Module):
    """
    Builds the initial decoder queries.

    With `enabled=False` the boundary path is skipped: selected queries are
    zero and the decoder starts from the learnable queries alone.
    """

    def __init__(
        self,
        boundary_channels: int,
        pixel_channels: int,
        num_queries: int = 5,
        n_partition: int = 4,
        pad: bool = False,
        enabled: bool = True,
    ):
        super().__init__()
        self.num_queries = num_queries
        self.n_partition = n_partition
        self.pad = pad
        self.enabled = enabled

        self.query_feat = nn.Embedding(num_queries, pixel_channels)
        self.align = MLP(boundary_channels, pixel_channels, pixel_channels, 2) if enabled else None
        if self.align is not None:
            self.align.requires_grad_(False)

    def align_boundary_feature(self, f_int: FeatureMap, target_size: tuple[int, int]) -> FeatureMap:
        return align_boundary_feature(f_int, self.align, self.n_partition, target_size, self.pad)

    def forward(self, f_pix: FeatureMap, f_int: FeatureMap | None = None) -> QuerySet:
        b = f_pix.data.shape[0]
        learnable = self.query_feat.weight.unsqueeze(0).expand(b, -1, -1)

        if not self.enabled or f_int is None:
            no_positions = torch.zeros(b, 0, 2, dtype=torch.long, device=learnable.device)
            return make_queries(torch.zeros_like(learnable), learnable, no_positions)

        aligned = self.align_boundary_feature(f_int, f_pix.size)
        s = similarity_map(f_pix, aligned, self.n_partition, self.pad)
        selected, positions = select_queries(s, f_pix, self.num_queries)
        return make_queries(selected, learnable, positions, s)
