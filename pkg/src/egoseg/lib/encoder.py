"""
Encoder - global feature and multi-scale pixel pyramid from an image.

Only the shape contract matters downstream:
    encode_global: (B, 3, H, W) -> (B, C_g, H / global_stride, W / global_stride)
    pixel_decode:  global feature -> L levels of (B, C_l, H / s_l, W / s_l)

The default network is small: 2x2 stride-2 patch-merging convolutions with
residual blocks, self-attention over the global tokens, and a top-down
decoder that upsamples the global feature level by level.
"""

import math

from torch import Tensor, nn

from .config import EncoderConfig
from .domain import FeatureMap, FeaturePyramid, ImageSample
from .errors import ShapeError
from .layers import ConvBlock, ResidualBlock, TransformerBlock, from_tokens, group_count, resize, to_tokens


class _Downsample(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int, depth: int):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, kernel_size=2, stride=2),
            nn.GroupNorm(group_count(out_channels), out_channels),
            nn.GELU(),
            *[ResidualBlock(out_channels) for _ in range(depth)],
        )


class PixelEncoder(nn.Module):
    """Image encoder plus pixel decoder honoring an EncoderConfig."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        c_g = cfg.global_channels
        num_down = int(math.log2(cfg.global_stride))

        self.stem = ConvBlock(3, c_g)
        self.down = nn.ModuleList(_Downsample(c_g, c_g, cfg.depth) for _ in range(num_down))
        self.global_attn = nn.ModuleList(
            TransformerBlock(c_g, cfg.heads, 2 * c_g) for _ in range(cfg.attention_layers)
        )

        # Top-down, coarsest level first.
        self.lateral = nn.ModuleList(ConvBlock(c_g, c_g) for _ in cfg.strides)
        self.output_proj = nn.ModuleList(nn.Conv2d(c_g, c, kernel_size=1) for c in cfg.channels)

    def encode_global(self, images: Tensor | ImageSample) -> FeatureMap:
        """Global feature of a (B, 3, H, W) batch or a single ImageSample."""
        if isinstance(images, ImageSample):
            images = images.pixels.unsqueeze(0)
        if images.dim() != 4 or images.shape[1] != 3:
            raise ShapeError(f"Expected (B, 3, H, W) images, got {tuple(images.shape)}")
        h, w = images.shape[-2:]
        if h < self.cfg.global_stride or w < self.cfg.global_stride:
            raise ShapeError(
                f"Image {h}x{w} is smaller than the encoder stride {self.cfg.global_stride}"
            )

        x = self.stem(images)
        for stage in self.down:
            x = stage(x)
        if self.global_attn:
            size = x.shape[-2:]
            tokens = to_tokens(x)
            for block in self.global_attn:
                tokens = block(tokens)
            x = from_tokens(tokens, size)
        return FeatureMap(x, level=len(self.cfg.strides))

    def pixel_decode(self, global_feat: FeatureMap) -> FeaturePyramid:
        """Multi-scale pixel features, finest level first."""
        if global_feat.channels != self.cfg.global_channels:
            raise ShapeError(
                f"Global feature has {global_feat.channels} channels, "
                f"config expects {self.cfg.global_channels}"
            )
        image_size = (
            global_feat.height * self.cfg.global_stride,
            global_feat.width * self.cfg.global_stride,
        )
        sizes = self.cfg.level_sizes(image_size)

        levels: list[FeatureMap] = []
        x = global_feat.data
        for index in reversed(range(len(sizes))):
            x = self.lateral[index](resize(x, sizes[index]))
            levels.append(FeatureMap(self.output_proj[index](x), level=index))
        return FeaturePyramid(levels[::-1])

    def forward(self, images: Tensor) -> tuple[FeatureMap, FeaturePyramid]:
        global_feat = self.encode_global(images)
        return global_feat, self.pixel_decode(global_feat)