"""Convolutional encoder stream and the boundary prediction head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import BatchNorm2d, Conv2d, Module
from .tensor import Tensor, avg_pool2d, relu, resize_nearest, sigmoid


@dataclass
class FeaturePyramid:
    """Per-stage encoder outputs. `fusion` is the mid-depth feature handed
    to the attention block; `bottleneck` is the deepest stage."""

    stages: list[Tensor]
    fusion: Tensor

    @property
    def bottleneck(self) -> Tensor:
        return self.stages[-1]


class EncoderStage(Module):
    """Two 3x3 conv + BN + ReLU units followed by 2x average pooling."""

    def __init__(self, rng, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = Conv2d(rng, in_channels, out_channels, 3, pad=1)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(rng, out_channels, out_channels, 3, pad=1)
        self.bn2 = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        x = relu(self.bn1(self.conv1(x)))
        x = relu(self.bn2(self.conv2(x)))
        return avg_pool2d(x, 2)


class Encoder(Module):
    """Three stages halving resolution each; channel widths scale with the
    fusion width: (width/2, width, 2*width). The fusion feature is the
    stage-2 output at quarter resolution."""

    def __init__(self, rng, in_channels: int, width: int):
        super().__init__()
        c1, c2, c3 = width // 2, width, 2 * width
        self.stages = [
            EncoderStage(rng, in_channels, c1),
            EncoderStage(rng, c1, c2),
            EncoderStage(rng, c2, c3),
        ]

    def forward(self, x: Tensor) -> FeaturePyramid:
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return FeaturePyramid(stages=feats, fusion=feats[1])


class BoundaryHead(Module):
    """1x1 conv on the encoder bottleneck, upsampled to input resolution,
    then sigmoid. Zero-initialised so the untrained map is exactly 0.5."""

    def __init__(self, rng, in_channels: int, up_factor: int):
        super().__init__()
        self.conv = Conv2d(rng, in_channels, 1, 1, zero_init=True)
        self.up_factor = up_factor

    def forward(self, pyramid: FeaturePyramid) -> Tensor:
        logits = self.conv(pyramid.bottleneck)
        return sigmoid(resize_nearest(logits, self.up_factor))
