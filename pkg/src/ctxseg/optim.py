"""Adam optimizer operating on named parameter tensors."""

from __future__ import annotations

import numpy as np

from .errors import NumericalError
from .tensor import Tensor


class Adam:
    """Standard Adam with bias correction.

    update = lr * m_hat / (sqrt(v_hat) + eps). Parameters with no gradient
    are treated as having a zero gradient, so an untouched parameter is
    left exactly in place. A non-finite gradient aborts immediately,
    naming the offending parameter.
    """

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = 0.0
            elif not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g if isinstance(g, np.ndarray) else 0.0)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "m": {name: self.m[name] for name, _ in self.params},
            "v": {name: self.v[name] for name, _ in self.params},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for name, p in self.params:
            m = np.asarray(state["m"][name], dtype=np.float64)
            v = np.asarray(state["v"][name], dtype=np.float64)
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise NumericalError(f"optimizer moment shape mismatch for '{name}'")
            self.m[name] = m.copy()
            self.v[name] = v.copy()
