"""Adam: closed-form first step, descent behaviour, and failure modes."""

import numpy as np
import pytest

from ctxseg.errors import NumericalError
from ctxseg.optim import Adam
from ctxseg.tensor import Tensor


def test_zero_gradient_leaves_parameter_unchanged():
    p = Tensor(np.array([1.5, -2.5]), requires_grad=True)
    opt = Adam([("p", p)], lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.5, -2.5])
    p.grad = None  # missing gradient counts as zero too
    opt.step()
    assert np.array_equal(p.data, [1.5, -2.5])


def test_first_step_matches_bias_corrected_closed_form():
    # After one step: m_hat = g, v_hat = g^2, so delta = lr * g / (|g| + eps).
    g = np.array([0.5, -0.03, 2.0])
    p = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam([("p", p)], lr=0.1, eps=1e-8)
    p.grad = g.copy()
    opt.step()
    want = -0.1 * g / (np.abs(g) + 1e-8)
    assert np.abs(p.data - want).max() <= 1e-15


def test_quadratic_descent_reaches_origin():
    # f(w) = w^2 from w = 1 with lr 0.1: well under 0.1 after 100 steps.
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([("w", w)], lr=0.1)
    for _ in range(100):
        w.grad = 2.0 * w.data
        opt.step()
    assert abs(float(w.data[0])) < 0.1


def test_nan_gradient_aborts_naming_parameter():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([("encoder.stage0.conv1.weight", p)], lr=0.1)
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(NumericalError, match="encoder.stage0.conv1.weight"):
        opt.step()


def test_state_dict_round_trip_continues_identically():
    rng = np.random.default_rng(5)
    a1 = Tensor(rng.standard_normal(4), requires_grad=True)
    a2 = Tensor(a1.data.copy(), requires_grad=True)
    o1 = Adam([("a", a1)], lr=0.05)
    o2 = Adam([("a", a2)], lr=0.05)
    grads = [rng.standard_normal(4) for _ in range(5)]
    for g in grads[:3]:
        a1.grad = g.copy()
        o1.step()
        a2.grad = g.copy()
        o2.step()
    state = o1.state_dict()
    o3 = Adam([("a", a2)], lr=0.05)
    o3.load_state_dict(state)
    for g in grads[3:]:
        a1.grad = g.copy()
        o1.step()
        a2.grad = g.copy()
        o3.step()
    assert a1.data.tobytes() == a2.data.tobytes()
