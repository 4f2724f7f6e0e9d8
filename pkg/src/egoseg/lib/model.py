"""
Model - end-to-end hand / active-object segmenter.

    image            -> encoder -> global feature, pixel pyramid (L levels)
    global feature   -> IPP     -> boundary map, boundary-guided pyramid
    last pixel level + last boundary level -> DQG -> initial queries
    decoder layer i  <- DFS(pixel level i mod L, boundary level i mod L)
    final queries    -> class scores, per-query masks, composed masks
"""

from dataclasses import dataclass, field

from torch import Tensor, nn

from .config import TrainConfig
from .decoder import (
    DecoderLayer,
    DFSTrace,
    DualContextFeatureSelector,
    LayerAttention,
    PixelMemory,
    PredictionHeads,
    SegmentationOutput,
)
from .domain import FeatureMap, FeaturePyramid
from .dqg import DynamicQueryGenerator, QuerySet
from .encoder import PixelEncoder
from .ipp import InteractionPriorPredictor, IPPOutput
from .layers import count_parameters


@dataclass(frozen=True)
class ModelOutput:
    segmentation: SegmentationOutput
    queries: QuerySet
    pyramid: FeaturePyramid
    boundary: IPPOutput | None = None
    dfs_traces: list[DFSTrace | None] = field(default_factory=list)
    layer_attention: list[LayerAttention] = field(default_factory=list)


class HandObjectSegmenter(nn.Module):
    """All trainable components, sized from a TrainConfig."""

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        enc, dec = cfg.encoder, cfg.decoder
        num_levels = enc.num_levels
        level_sizes = enc.level_sizes(cfg.image_size)
        source_level = cfg.dqg.source_level % num_levels
        self.source_level = source_level

        self.encoder = PixelEncoder(enc)
        self.ipp = (
            InteractionPriorPredictor(
                enc.global_channels,
                enc.global_stride,
                enc.strides,
                cfg.ipp.channels,
                cfg.ipp.head_layers,
            )
            if cfg.ipp.enabled
            else None
        )

        query_channels = enc.channels[source_level]
        self.dqg = DynamicQueryGenerator(
            boundary_channels=cfg.ipp.channels,
            pixel_channels=query_channels,
            num_queries=cfg.dqg.num_queries,
            n_partition=cfg.dqg.n_partition,
            pad=cfg.dqg.pad,
            enabled=cfg.dqg.enabled,
        )
        self.query_proj = (
            nn.Linear(query_channels, dec.dim) if query_channels != dec.dim else nn.Identity()
        )

        self.level_of_layer = [i % num_levels for i in range(dec.layers)]
        self.selectors = nn.ModuleList(
            DualContextFeatureSelector(
                enc.channels[lvl], cfg.ipp.channels, dec.dim, level_sizes[lvl], dec.heads, dec.dropout
            )
            if dec.dfs
            else PixelMemory(enc.channels[lvl], dec.dim, level_sizes[lvl])
            for lvl in self.level_of_layer
        )
        self.layers = nn.ModuleList(
            DecoderLayer(dec.dim, dec.heads, dec.ffn_dim, dec.dropout) for _ in range(dec.layers)
        )

        self.mask_feature = nn.Conv2d(enc.channels[0], dec.dim, kernel_size=1)
        self.heads = PredictionHeads(dec.dim)

    @property
    def parameter_count(self) -> int:
        return count_parameters(self)

    def forward(self, images: Tensor, return_attention: bool = False) -> ModelOutput:
        image_size = tuple(images.shape[-2:])
        global_feat, pyramid = self.encoder(images)

        boundary = None
        f_int: FeaturePyramid | None = None
        if self.ipp is not None:
            boundary = self.ipp(global_feat, pyramid.sizes, image_size)
            f_int = boundary.features

        source = pyramid[self.source_level]
        queries = self.dqg(source, f_int[self.source_level] if f_int is not None else None)
        q = self.query_proj(queries.fused)

        traces: list[DFSTrace | None] = []
        attention: list[LayerAttention] = []
        for level, selector, layer in zip(self.level_of_layer, self.selectors, self.layers):
            f_int_l = f_int[level] if f_int is not None else None
            if return_attention:
                memory, trace = selector(pyramid[level], f_int_l, return_trace=True)
                q, weights = layer(q, memory, return_attention=True)
                traces.append(trace)
                attention.append(weights)
            else:
                q = layer(q, selector(pyramid[level], f_int_l))

        mask_feature = FeatureMap(self.mask_feature(pyramid[0].data), level=0)
        segmentation = self.heads(q, mask_feature, image_size)
        return ModelOutput(
            segmentation=segmentation,
            queries=queries,
            pyramid=pyramid,
            boundary=boundary,
            dfs_traces=traces,
            layer_attention=attention,
        )
