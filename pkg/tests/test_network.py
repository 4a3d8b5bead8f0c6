"""Whole-network invariants and ablation switch behaviour."""

import numpy as np
import pytest

from helpers import randomize_heads, small_net

from ctxseg.errors import ConfigError
from ctxseg.network import ContextualSegNet
from ctxseg.tensor import Tensor


def test_forward_shapes_and_codomains():
    rng = np.random.default_rng(0)
    net = small_net(rng)
    randomize_heads(net, rng)
    out = net(Tensor(np.random.default_rng(1).random((3, 1, 16, 16))))
    assert out.mask_prob.shape == (3, 1, 16, 16)
    assert out.boundary_prob.shape == (3, 1, 16, 16)
    assert out.context_map.shape == (3, 1, 16, 16)
    assert out.region_scores.shape == (3, 16, 1)
    for t in (out.mask_prob, out.boundary_prob, out.context_map,
              out.region_scores):
        assert 0.0 < t.data.min() and t.data.max() < 1.0


def test_untrained_outputs_are_exactly_half():
    rng = np.random.default_rng(2)
    net = small_net(rng)
    out = net(Tensor(np.random.default_rng(3).random((2, 1, 16, 16))))
    assert np.all(out.mask_prob.data == 0.5)
    assert np.all(out.boundary_prob.data == 0.5)
    assert np.all(out.context_map.data == 0.5)
    assert np.all(out.region_scores.data == 0.5)


def test_construction_is_deterministic_per_seed():
    a = small_net(np.random.default_rng(7))
    b = small_net(np.random.default_rng(7))
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert pa.data.tobytes() == pb.data.tobytes()
    x = Tensor(np.random.default_rng(8).random((1, 1, 16, 16)))
    assert a(x).mask_prob.data.tobytes() == b(x).mask_prob.data.tobytes()


def test_eval_forward_is_batch_consistent():
    rng = np.random.default_rng(4)
    net = small_net(rng).eval()
    randomize_heads(net, rng)
    xs = np.random.default_rng(5).random((3, 1, 16, 16))
    batched = net(Tensor(xs))
    for i in range(3):
        single = net(Tensor(xs[i:i + 1]))
        assert np.abs(
            batched.mask_prob.data[i] - single.mask_prob.data[0]).max() <= 1e-12


def test_trace_records_every_stage():
    rng = np.random.default_rng(6)
    net = small_net(rng)
    randomize_heads(net, rng)
    out = net(Tensor(np.random.default_rng(7).random((2, 1, 16, 16))),
              want_trace=True)
    tr = out.trace
    assert len(tr.attention) == 2
    assert all(a.shape == (2, 2, 16, 16) for a in tr.attention)
    assert tr.tokens.shape == (2, 16, 8)
    assert tr.fusion.channel_weights.shape == (2, 8)
    assert tr.fusion.recalibrated.shape == (2, 8, 4, 4)
    assert tr.fusion.boundary_added.shape == (2, 8, 4, 4)
    assert tr.fusion.region_scaled.shape == (2, 8, 4, 4)
    assert tr.fusion.fused.shape == (2, 8, 4, 4)
    # boundary injection really happened
    assert not np.array_equal(tr.fusion.recalibrated.data,
                              tr.fusion.boundary_added.data)


def test_no_transformer_ablation():
    rng = np.random.default_rng(8)
    net = small_net(rng, no_transformer=True)
    randomize_heads(net, rng)
    out = net(Tensor(np.random.default_rng(9).random((2, 1, 16, 16))),
              want_trace=True)
    assert np.all(out.context_map.data == 0.5)
    assert np.all(out.region_scores.data == 1.0)
    assert out.trace.tokens is None
    assert out.trace.attention == []
    # region scaling is skipped entirely
    assert out.trace.fusion.region_scaled is out.trace.fusion.boundary_added


def test_no_ctx_attention_ablation():
    rng = np.random.default_rng(10)
    net = small_net(rng, no_ctx_attention=True)
    randomize_heads(net, rng)
    out = net(Tensor(np.random.default_rng(11).random((2, 1, 16, 16))),
              want_trace=True)
    assert np.all(out.trace.fusion.channel_weights.data == 1.0)
    assert out.trace.fusion.region_scaled is out.trace.fusion.boundary_added
    # transformer still runs: context map is a live head
    assert len(out.trace.attention) == 2


def test_no_boundary_ablation():
    rng = np.random.default_rng(12)
    net = small_net(rng, no_boundary=True)
    randomize_heads(net, rng)
    out = net(Tensor(np.random.default_rng(13).random((2, 1, 16, 16))),
              want_trace=True)
    # head still predicts, but fusion never sees it
    assert 0.0 < out.boundary_prob.data.min()
    assert out.trace.fusion.boundary_added is out.trace.fusion.recalibrated


def test_every_parameter_receives_gradient():
    rng = np.random.default_rng(14)
    net = small_net(rng)
    net.train()
    randomize_heads(net, rng)
    x = Tensor(np.random.default_rng(15).random((2, 1, 16, 16)))
    cs = np.random.default_rng(16)
    out = net(x)
    loss = (out.mask_prob * Tensor(cs.standard_normal((2, 1, 16, 16)))).sum() \
        + (out.boundary_prob * Tensor(cs.standard_normal((2, 1, 16, 16)))).sum() \
        + (out.context_map * Tensor(cs.standard_normal((2, 1, 16, 16)))).sum() \
        + (out.region_scores * Tensor(cs.standard_normal((2, 16, 1)))).sum()
    loss.backward()
    dead = [name for name, p in net.named_parameters()
            if p.grad is None or np.abs(p.grad).max() == 0.0]
    # conv biases directly ahead of a batch norm are absorbed by design
    absorbed = [n for n in dead if n.endswith(".bias")
                and ("conv" in n.rsplit(".", 2)[-2])]
    truly_dead = sorted(set(dead) - set(absorbed))
    assert truly_dead == [], truly_dead


def test_input_validation():
    rng = np.random.default_rng(17)
    net = small_net(rng)
    with pytest.raises(ConfigError):
        net(Tensor(np.zeros((1, 1, 8, 8))))
    with pytest.raises(ConfigError):
        small_net(rng, height=12)
    with pytest.raises(ConfigError):
        small_net(rng, patch=6)
    with pytest.raises(ConfigError):
        small_net(rng, embed_dim=9)
    with pytest.raises(ConfigError):
        small_net(rng, feat_channels=10)
