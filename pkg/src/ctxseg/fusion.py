"""Contextual attention fusion: channel recalibration of the CNN feature,
boundary injection, region-score spatial scaling, context-map fusion, and
the decoder that maps the fused feature back to a full-resolution mask."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ShapeError
from .layers import BatchNorm2d, Conv2d, Linear, Module
from .tensor import (
    Tensor,
    concat,
    downsample_nearest,
    global_avg_pool,
    relu,
    reshape,
    resize_nearest,
    sigmoid,
)


@dataclass
class FusionTrace:
    """Intermediates of one fusion pass, in application order."""

    channel_weights: Tensor     # (B, C)
    recalibrated: Tensor        # channel-weighted feature
    boundary_added: Tensor      # + downsampled boundary map
    region_scaled: Tensor       # * upsampled region scores
    fused: Tensor               # after context concat + 1x1 conv + BN + ReLU


class ChannelGate(Module):
    """Squeeze-excite weights: sigmoid(W2 relu(W1 GAP(f))), no biases."""

    def __init__(self, rng, channels: int, reduction: int):
        super().__init__()
        if channels % reduction:
            raise ShapeError(f"reduction {reduction} must divide channels {channels}")
        self.fc1 = Linear(rng, channels, channels // reduction, bias=False)
        self.fc2 = Linear(rng, channels // reduction, channels, bias=False)

    def forward(self, f: Tensor) -> Tensor:
        return sigmoid(self.fc2(relu(self.fc1(global_avg_pool(f)))))


def recalibrate(f: Tensor, weights: Tensor, boundary_map: Tensor | None) -> tuple[Tensor, Tensor]:
    """Scale each channel by its weight, then add the boundary map
    (nearest-downsampled to the feature grid, broadcast over channels).
    Returns (weighted, weighted + boundary)."""
    b, c, h, w = f.shape
    if weights.shape != (b, c):
        raise ShapeError(f"channel weights must be {(b, c)}, got {weights.shape}")
    weighted = f * reshape(weights, (b, c, 1, 1))
    if boundary_map is None:
        return weighted, weighted
    if boundary_map.shape[0] != b or boundary_map.shape[1] != 1:
        raise ShapeError(f"boundary map must be (B, 1, H, W), got {boundary_map.shape}")
    factor = boundary_map.shape[2] // h
    if factor * h != boundary_map.shape[2] or factor * w != boundary_map.shape[3]:
        raise ShapeError(
            f"boundary map {boundary_map.shape[2:]} is not an integer multiple of {h}x{w}")
    return weighted, weighted + downsample_nearest(boundary_map, factor)


def spatial_normalize(f: Tensor, region: Tensor) -> Tensor:
    """Multiply the feature map by per-patch region scores, nearest-upsampled
    from the token grid to the feature grid. The scores enter bilinearly:
    scaling one entry scales exactly its feature block."""
    b, c, h, w = f.shape
    if region.ndim != 3 or region.shape[0] != b or region.shape[2] != 1:
        raise ShapeError(f"region scores must be (B, N, 1), got {region.shape}")
    n = region.shape[1]
    gh = int(round((n * h / w) ** 0.5))
    if gh == 0 or n % gh or (n // gh) * gh != n:
        raise ShapeError(f"cannot arrange {n} region scores on a {h}x{w} grid")
    gw = n // gh
    if h % gh or w % gw or h // gh != w // gw:
        raise ShapeError(f"region grid {gh}x{gw} does not tile feature grid {h}x{w}")
    score_map = reshape(region, (b, 1, gh, gw))
    return f * resize_nearest(score_map, h // gh)


class ContextFuse(Module):
    """Concat the downsampled context map as an extra channel, then
    1x1 conv + BN + ReLU back to the feature width."""

    def __init__(self, rng, channels: int):
        super().__init__()
        self.conv = Conv2d(rng, channels + 1, channels, 1)
        self.bn = BatchNorm2d(channels)

    def forward(self, f: Tensor, context_map: Tensor) -> Tensor:
        b, c, h, w = f.shape
        factor = context_map.shape[2] // h
        if factor * h != context_map.shape[2] or factor * w != context_map.shape[3]:
            raise ShapeError(
                f"context map {context_map.shape[2:]} is not an integer multiple of {h}x{w}")
        ctx = downsample_nearest(context_map, factor) if factor > 1 else context_map
        return relu(self.bn(self.conv(concat([ctx, f], axis=1))))


class Decoder(Module):
    """Two upsample + conv3x3 + BN + ReLU blocks back to full resolution,
    one refining conv3x3 + BN + ReLU, then a zero-initialised 1x1 conv +
    sigmoid. Channel schedule: C -> C/2 -> C/4 -> 1."""

    def __init__(self, rng, channels: int):
        super().__init__()
        if channels % 4:
            raise ShapeError(f"decoder needs channels divisible by 4, got {channels}")
        c2, c4 = channels // 2, channels // 4
        self.conv1 = Conv2d(rng, channels, c2, 3, pad=1)
        self.bn1 = BatchNorm2d(c2)
        self.conv2 = Conv2d(rng, c2, c4, 3, pad=1)
        self.bn2 = BatchNorm2d(c4)
        self.conv3 = Conv2d(rng, c4, c4, 3, pad=1)
        self.bn3 = BatchNorm2d(c4)
        self.head = Conv2d(rng, c4, 1, 1, zero_init=True)

    def forward(self, f: Tensor) -> Tensor:
        f = relu(self.bn1(self.conv1(resize_nearest(f, 2))))
        f = relu(self.bn2(self.conv2(resize_nearest(f, 2))))
        f = relu(self.bn3(self.conv3(f)))
        return sigmoid(self.head(f))
