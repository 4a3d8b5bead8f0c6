"""Central finite-difference gradient verification.

The numeric side never touches the autodiff records: it re-evaluates the
forward function at perturbed inputs, element by element, and compares
against the accumulated analytic gradients.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   atol: float = 1e-9) -> float:
    """Largest discrepancy relative to the largest gradient magnitude.

    Differences below `atol` count as agreement. Central differences of a
    loss of magnitude L carry cancellation noise of roughly eps*L/h, about
    1e-11 here, so a truly zero gradient (a bias feeding a normalization
    that subtracts it out) would otherwise score noise/noise = 1.
    """
    diff = float(np.abs(analytic - numeric).max()) if analytic.size else 0.0
    if diff <= atol:
        return 0.0
    scale = max(float(np.abs(analytic).max()) if analytic.size else 0.0,
                float(np.abs(numeric).max()) if numeric.size else 0.0,
                1e-12)
    return diff / scale


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d arr by central differences, mutating arr in place and restoring it."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = f()
        flat[j] = orig - h
        fm = f()
        flat[j] = orig
        gflat[j] = (fp - fm) / (2.0 * h)
    return grad


def check_op(f: Callable[..., Tensor], inputs: list[Tensor], h: float = 1e-5) -> dict[int, float]:
    """Compare analytic and numeric gradients of scalar-valued f per input.

    Only inputs with requires_grad are checked. Returns {input index:
    relative error}.
    """
    for t in inputs:
        t.grad = None
    out = f(*inputs)
    out.backward()
    errs: dict[int, float] = {}
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_gradient(lambda: f(*inputs).item(), t.data, h=h)
        errs[i] = relative_error(analytic, numeric)
    return errs


def check_params(loss_fn: Callable[[], Tensor],
                 named_params: Iterable[tuple[str, Tensor]],
                 h: float = 1e-5) -> dict[str, float]:
    """Finite-difference check of loss_fn against every named parameter.

    loss_fn must rebuild its graph from the live parameter tensors each
    call; parameters are perturbed in place and restored.
    """
    named = list(named_params)
    for _, p in named:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in named}
    errs: dict[str, float] = {}
    for name, p in named:
        numeric = numerical_gradient(lambda: loss_fn().item(), p.data, h=h)
        errs[name] = relative_error(analytic[name], numeric)
    return errs
