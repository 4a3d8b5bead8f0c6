"""Channel gate, recalibration, region scaling, context fusion, decoder."""

import numpy as np
import pytest

from ctxseg.errors import ShapeError
from ctxseg.fusion import (
    ChannelGate, ContextFuse, Decoder, recalibrate, spatial_normalize)
from ctxseg.gradcheck import check_params
from ctxseg.tensor import Tensor


def test_channel_gate_zeroed_excitation_is_half():
    rng = np.random.default_rng(0)
    gate = ChannelGate(rng, channels=8, reduction=4)
    gate.fc2.weight.data[:] = 0.0
    w = gate(Tensor(rng.random((3, 8, 4, 4))))
    assert w.shape == (3, 8)
    assert np.all(w.data == 0.5)


def test_channel_gate_codomain_and_reduction_check():
    rng = np.random.default_rng(1)
    gate = ChannelGate(rng, channels=8, reduction=4)
    assert gate.fc1.weight.shape == (8, 2)
    w = gate(Tensor(rng.standard_normal((2, 8, 4, 4))))
    assert 0.0 < w.data.min() and w.data.max() < 1.0
    with pytest.raises(ShapeError):
        ChannelGate(rng, channels=8, reduction=3)


def test_recalibrate_matches_elementwise_oracle():
    rng = np.random.default_rng(2)
    f = Tensor(rng.standard_normal((2, 3, 4, 4)))
    w = Tensor(rng.random((2, 3)))
    bmap = Tensor(rng.random((2, 1, 8, 8)))
    weighted, added = recalibrate(f, w, bmap)

    expect_w = np.zeros_like(f.data)
    for b in range(2):
        for c in range(3):
            expect_w[b, c] = f.data[b, c] * w.data[b, c]
    assert np.array_equal(weighted.data, expect_w)
    # top-left anchored downsample, broadcast over channels
    expect_a = expect_w + bmap.data[:, :, ::2, ::2]
    assert np.array_equal(added.data, expect_a)


def test_recalibrate_without_boundary_map():
    rng = np.random.default_rng(3)
    f = Tensor(rng.standard_normal((1, 2, 4, 4)))
    w = Tensor(rng.random((1, 2)))
    weighted, added = recalibrate(f, w, None)
    assert added is weighted
    with pytest.raises(ShapeError):
        recalibrate(f, Tensor(rng.random((1, 3))), None)
    with pytest.raises(ShapeError):
        recalibrate(f, w, Tensor(rng.random((1, 1, 6, 6))))


def test_spatial_normalize_identity_and_exact_scaling():
    rng = np.random.default_rng(4)
    f = Tensor(rng.standard_normal((1, 3, 8, 8)))
    ones = Tensor(np.ones((1, 16, 1)))
    assert np.array_equal(spatial_normalize(f, ones).data, f.data)

    # doubling one score doubles exactly its 2x2 block in every channel
    region = np.ones((1, 16, 1))
    region[0, 5, 0] = 2.0
    out = spatial_normalize(f, Tensor(region))
    gy, gx = divmod(5, 4)
    sl = np.s_[0, :, gy * 2:(gy + 1) * 2, gx * 2:(gx + 1) * 2]
    assert np.array_equal(out.data[sl], 2.0 * f.data[sl])
    mask = np.ones((8, 8), dtype=bool)
    mask[gy * 2:(gy + 1) * 2, gx * 2:(gx + 1) * 2] = False
    assert np.array_equal(out.data[0, :, mask], f.data[0, :, mask])

    # zero score blanks the block
    region[0, 5, 0] = 0.0
    out = spatial_normalize(f, Tensor(region))
    assert np.all(out.data[sl] == 0.0)


def test_spatial_normalize_rejects_bad_grids():
    rng = np.random.default_rng(5)
    f = Tensor(rng.standard_normal((1, 2, 8, 8)))
    with pytest.raises(ShapeError):
        spatial_normalize(f, Tensor(np.ones((1, 5, 1))))
    with pytest.raises(ShapeError):
        spatial_normalize(f, Tensor(np.ones((2, 16, 1))))


def test_context_fuse_identity_wiring():
    """Conv weights copying the feature channels and ignoring the context
    channel reduce fusion to a near-identity on positive features."""
    rng = np.random.default_rng(6)
    fuse = ContextFuse(rng, channels=4).eval()
    w = np.zeros((4, 5, 1, 1))
    for c in range(4):
        w[c, 1 + c, 0, 0] = 1.0          # context occupies channel 0
    fuse.conv.weight.data[:] = w
    fuse.conv.bias.data[:] = 0.0

    f = Tensor(rng.random((2, 4, 4, 4)) + 0.5)
    ctx = Tensor(rng.random((2, 1, 16, 16)))
    out = fuse(f, ctx)
    # eval-mode BN with fresh buffers only rescales by 1/sqrt(1+eps)
    assert np.allclose(out.data, f.data / np.sqrt(1.0 + 1e-5), atol=1e-12)


def test_context_fuse_uses_context_channel():
    rng = np.random.default_rng(7)
    fuse = ContextFuse(rng, channels=4).eval()
    f = Tensor(rng.random((1, 4, 4, 4)))
    a = fuse(f, Tensor(np.zeros((1, 1, 8, 8))))
    b = fuse(f, Tensor(np.ones((1, 1, 8, 8))))
    assert not np.array_equal(a.data, b.data)
    with pytest.raises(ShapeError):
        fuse(f, Tensor(np.ones((1, 1, 6, 6))))


def test_decoder_shapes_codomain_and_zero_init():
    rng = np.random.default_rng(8)
    dec = Decoder(rng, channels=8).eval()
    f = Tensor(np.random.default_rng(9).random((2, 8, 4, 4)))
    out = dec(f)
    assert out.shape == (2, 1, 16, 16)
    assert np.all(out.data == 0.5)

    dec.head.weight.data[:] = np.random.default_rng(10).standard_normal(
        dec.head.weight.shape)
    out = dec(f)
    assert 0.0 < out.data.min() and out.data.max() < 1.0
    with pytest.raises(ShapeError):
        Decoder(rng, channels=6)


def test_fusion_path_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    gate = ChannelGate(rng, channels=4, reduction=2)
    # keep the tiny excitation layer off its ReLU kink: nonnegative weights
    # on a nonnegative pooled input cannot go dead
    gate.fc1.weight.data[:] = np.abs(gate.fc1.weight.data) + 0.05
    fuse = ContextFuse(rng, channels=4)
    dec = Decoder(rng, channels=4)
    dec.head.weight.data[:] = rng.standard_normal(dec.head.weight.shape)
    fuse.train()
    dec.train()

    f = Tensor(rng.random((1, 4, 4, 4)))
    bmap = Tensor(rng.random((1, 1, 16, 16)))
    region = Tensor(rng.random((1, 4, 1)) + 0.5)
    ctx = Tensor(rng.random((1, 1, 16, 16)))
    c = Tensor(rng.standard_normal((1, 1, 16, 16)))

    def loss():
        w = gate(f)
        _, fb = recalibrate(f, w, bmap)
        fs = spatial_normalize(fb, region)
        return (dec(fuse(fs, ctx)) * c).sum()

    params = list(gate.named_parameters()) \
        + [("fuse.conv.weight", fuse.conv.weight),
           ("fuse.bn.gamma", fuse.bn.gamma), ("fuse.bn.beta", fuse.bn.beta),
           ("dec.conv1.weight", dict(dec.named_parameters())["conv1.weight"]),
           ("dec.head.weight", dec.head.weight)]
    errs = check_params(loss, params)
    assert max(errs.values()) <= 1e-4

    # gradient actually flows into the gate here
    loss().backward()
    assert np.abs(gate.fc1.weight.grad).max() > 0.0
    assert np.abs(gate.fc2.weight.grad).max() > 0.0
    # a conv bias directly ahead of batch norm is absorbed by the mean
    # subtraction, so its gradient vanishes
    assert np.abs(fuse.conv.bias.grad).max() <= 1e-10
