"""Shared test utilities."""

import numpy as np

from ctxseg.network import ContextualSegNet


def small_net(rng, **kw):
    args = dict(height=16, width=16, in_channels=1, patch=4, embed_dim=8,
                depth=2, heads=2, feat_channels=8, se_reduction=4)
    args.update(kw)
    return ContextualSegNet(rng, **args)


def randomize_heads(net, rng, scale=0.5):
    """Give the zero-initialised heads random weights so gradient reaches
    every branch, and keep the excitation layer away from dead ReLUs."""
    for conv in (net.boundary_head.conv, net.transformer.context_conv,
                 net.decoder.head):
        conv.weight.data[:] = rng.standard_normal(conv.weight.shape) * scale
    net.transformer.region_fc.weight.data[:] = \
        rng.standard_normal(net.transformer.region_fc.weight.shape) * scale
    net.gate.fc1.weight.data[:] = np.abs(net.gate.fc1.weight.data) + 0.05
