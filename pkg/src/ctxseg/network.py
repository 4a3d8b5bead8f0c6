"""Full two-stream segmentation network with ablation switches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cnn import BoundaryHead, Encoder, FeaturePyramid
from .errors import ConfigError
from .fusion import ChannelGate, ContextFuse, Decoder, FusionTrace, recalibrate, spatial_normalize
from .layers import Module
from .tensor import Tensor
from .transformer import TransformerStream


@dataclass
class ForwardOutputs:
    """All prediction maps of one forward pass, probabilities in (0, 1)."""

    mask_prob: Tensor       # (B, 1, H, W)
    boundary_prob: Tensor   # (B, 1, H, W)
    context_map: Tensor     # (B, 1, H, W)
    region_scores: Tensor   # (B, N, 1)
    trace: "ForwardTrace | None" = None


@dataclass
class ForwardTrace:
    attention: list[Tensor] = field(default_factory=list)   # (B, M, N, N) per block
    pyramid: FeaturePyramid | None = None
    tokens: Tensor | None = None
    fusion: FusionTrace | None = None


class ContextualSegNet(Module):
    """CNN encoder and patch transformer fused by contextual attention.

    Ablation switches mirror the removal studies:
      - no_boundary: boundary map excluded from fusion (its loss weight is
        zeroed by the trainer; the head itself still produces output)
      - no_transformer: transformer not evaluated; region scores become 1
        and the context map 0.5
      - no_ctx_attention: channel weights forced to 1 and region scaling
        skipped, leaving plain concat + 1x1 conv fusion
    """

    def __init__(self, rng: np.random.Generator, height: int, width: int,
                 in_channels: int = 1, patch: int = 8, embed_dim: int = 64,
                 depth: int = 4, heads: int = 4, feat_channels: int = 32,
                 se_reduction: int = 4, no_boundary: bool = False,
                 no_transformer: bool = False, no_ctx_attention: bool = False):
        super().__init__()
        if height % 8 or width % 8:
            raise ConfigError(f"input extents must divide by 8, got {height}x{width}")
        if height % patch or width % patch:
            raise ConfigError(f"patch {patch} must divide {height}x{width}")
        if patch % 4:
            raise ConfigError(f"patch must divide by 4 to align with the fusion grid, got {patch}")
        if feat_channels % 4 or feat_channels % se_reduction:
            raise ConfigError(
                f"feature width {feat_channels} must divide by 4 and by reduction {se_reduction}")
        if embed_dim % heads:
            raise ConfigError(f"embedding dim {embed_dim} must divide by heads {heads}")
        self.height = height
        self.width = width
        self.in_channels = in_channels
        self.patch = patch
        self.no_boundary = no_boundary
        self.no_transformer = no_transformer
        self.no_ctx_attention = no_ctx_attention

        self.encoder = Encoder(rng, in_channels, feat_channels)
        self.boundary_head = BoundaryHead(rng, 2 * feat_channels, up_factor=8)
        self.transformer = TransformerStream(
            rng, patch, in_channels, embed_dim, depth, heads,
            grid=(height // patch, width // patch))
        self.gate = ChannelGate(rng, feat_channels, se_reduction)
        self.fuse = ContextFuse(rng, feat_channels)
        self.decoder = Decoder(rng, feat_channels)

    def n_tokens(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    def forward(self, x: Tensor, want_trace: bool = False) -> ForwardOutputs:
        b = x.shape[0]
        if x.shape[1:] != (self.in_channels, self.height, self.width):
            raise ConfigError(
                f"input shape {x.shape[1:]} does not match model "
                f"({self.in_channels}, {self.height}, {self.width})")
        trace = ForwardTrace() if want_trace else None

        pyramid = self.encoder(x)
        boundary = self.boundary_head(pyramid)

        if self.no_transformer:
            tokens = None
            context = Tensor(np.full((b, 1, self.height, self.width), 0.5))
            region = Tensor(np.ones((b, self.n_tokens(), 1)))
        else:
            tokens, context, region = self.transformer(
                x, trace.attention if trace is not None else None)

        f = pyramid.fusion
        if self.no_ctx_attention:
            weights = Tensor(np.ones((b, f.shape[1])))
        else:
            weights = self.gate(f)
        weighted, with_boundary = recalibrate(
            f, weights, None if self.no_boundary else boundary)
        if self.no_ctx_attention or self.no_transformer:
            scaled = with_boundary
        else:
            scaled = spatial_normalize(with_boundary, region)
        fused = self.fuse(scaled, context)
        mask = self.decoder(fused)

        if trace is not None:
            trace.pyramid = pyramid
            trace.tokens = tokens
            trace.fusion = FusionTrace(
                channel_weights=weights, recalibrated=weighted,
                boundary_added=with_boundary, region_scaled=scaled, fused=fused)
        return ForwardOutputs(
            mask_prob=mask, boundary_prob=boundary,
            context_map=context, region_scores=region, trace=trace)


def build_network(config, rng: np.random.Generator | None = None) -> ContextualSegNet:
    """Construct a network from a TrainConfig-like object."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    return ContextualSegNet(
        rng,
        height=config.height, width=config.width, in_channels=config.channels,
        patch=config.patch, embed_dim=config.embed_dim, depth=config.depth,
        heads=config.heads, feat_channels=config.feat_channels,
        se_reduction=config.se_reduction, no_boundary=config.no_boundary,
        no_transformer=config.no_transformer, no_ctx_attention=config.no_ctx_attention)
