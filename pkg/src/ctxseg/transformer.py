"""Transformer stream: patch tokens, pre-norm attention blocks, and the two
global-context heads (a dense context map and per-patch region scores)."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .layers import Conv2d, LayerNorm, Linear, Module, fan_in_uniform
from .tensor import (
    Tensor,
    concat,
    matmul,
    relu,
    reshape,
    resize_nearest,
    sigmoid,
    softmax,
    transpose,
)


def patchify(x: Tensor, patch: int) -> Tensor:
    """(B, C, H, W) -> (B, N, patch*patch*C) with patches in row-major order
    and channel-major flattening inside each patch."""
    b, c, h, w = x.shape
    if h % patch or w % patch:
        raise ShapeError(f"patch {patch} must divide spatial extents {h}x{w}")
    gh, gw = h // patch, w // patch
    t = reshape(x, (b, c, gh, patch, gw, patch))
    t = transpose(t, (0, 2, 4, 1, 3, 5))          # (B, gh, gw, C, p, p)
    return reshape(t, (b, gh * gw, c * patch * patch))


class PatchEmbed(Module):
    """Linear patch projection plus a learned positional table. The
    projection has no bias, so a zero image embeds to the positions."""

    def __init__(self, rng, patch: int, in_channels: int, dim: int, n_tokens: int):
        super().__init__()
        in_features = patch * patch * in_channels
        self.proj = Linear(rng, in_features, dim, bias=False)
        self.pos = Tensor(fan_in_uniform(rng, (n_tokens, dim), in_features),
                          requires_grad=True)
        self.patch = patch

    def forward(self, x: Tensor) -> Tensor:
        tokens = matmul(patchify(x, self.patch), self.proj.weight)
        return tokens + self.pos


class MultiHeadAttention(Module):
    """Softmax attention over tokens with per-head scaling 1/sqrt(dim/heads)."""

    def __init__(self, rng, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"embedding dim {dim} must divide by heads {heads}")
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.out = Linear(rng, dim, dim)
        self.heads = heads
        self.head_dim = dim // heads

    def _split(self, t: Tensor, b: int, n: int) -> Tensor:
        t = reshape(t, (b, n, self.heads, self.head_dim))
        return transpose(t, (0, 2, 1, 3))          # (B, M, N, dim/M)

    def forward(self, x: Tensor, attn_sink: list | None = None) -> Tensor:
        b, n, d = x.shape
        q = self._split(self.q(x), b, n)
        k = self._split(self.k(x), b, n)
        v = self._split(self.v(x), b, n)
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        attn = softmax(scores, axis=-1)            # (B, M, N, N), rows sum to 1
        if attn_sink is not None:
            attn_sink.append(attn)
        mixed = matmul(attn, v)
        mixed = reshape(transpose(mixed, (0, 2, 1, 3)), (b, n, d))
        return self.out(mixed)


class Mlp(Module):
    """Two linear layers with ReLU; hidden width is twice the embedding."""

    def __init__(self, rng, dim: int):
        super().__init__()
        self.fc1 = Linear(rng, dim, 2 * dim)
        self.fc2 = Linear(rng, 2 * dim, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class Block(Module):
    """Pre-norm transformer block: x + MSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, rng, dim: int, heads: int):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(rng, dim)

    def forward(self, x: Tensor, attn_sink: list | None = None) -> Tensor:
        x = self.attn(self.norm1(x), attn_sink) + x
        return self.mlp(self.norm2(x)) + x


class TransformerStream(Module):
    """Patch transformer producing final tokens plus two sigmoid heads:

    - context map: 1x1 conv over the token grid, nearest-upsampled back to
      image resolution, one channel
    - region scores: per-token linear readout, (B, N, 1)

    Both heads are zero-initialised (untrained outputs are exactly 0.5).
    """

    def __init__(self, rng, patch: int, in_channels: int, dim: int,
                 depth: int, heads: int, grid: tuple[int, int]):
        super().__init__()
        self.grid = grid
        self.patch = patch
        self.dim = dim
        self.embed = PatchEmbed(rng, patch, in_channels, dim, grid[0] * grid[1])
        self.blocks = [Block(rng, dim, heads) for _ in range(depth)]
        self.context_conv = Conv2d(rng, dim, 1, 1, zero_init=True)
        self.region_fc = Linear(rng, dim, 1, zero_init=True)

    def encode(self, x: Tensor, attn_sink: list | None = None) -> Tensor:
        t = self.embed(x)
        for blk in self.blocks:
            t = blk(t, attn_sink)
        return t

    def context_map(self, tokens: Tensor) -> Tensor:
        b, n, d = tokens.shape
        gh, gw = self.grid
        grid = transpose(reshape(tokens, (b, gh, gw, d)), (0, 3, 1, 2))
        return sigmoid(resize_nearest(self.context_conv(grid), self.patch))

    def region_scores(self, tokens: Tensor) -> Tensor:
        return sigmoid(self.region_fc(tokens))

    def forward(self, x: Tensor, attn_sink: list | None = None):
        tokens = self.encode(x, attn_sink)
        return tokens, self.context_map(tokens), self.region_scores(tokens)
