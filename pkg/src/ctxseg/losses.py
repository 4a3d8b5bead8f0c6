"""Joint training objective: mask BCE + boundary BCE + region MSE."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, ShapeError
from .tensor import Tensor, clip, log

CLAMP = 1e-7


@dataclass
class LossWeights:
    seg: float = 1.0
    boundary: float = 1.0
    region: float = 1.0

    def validate(self) -> None:
        if min(self.seg, self.boundary, self.region) < 0.0:
            raise ConfigError(f"loss weights must be >= 0, got {self}")
        if self.seg == self.boundary == self.region == 0.0:
            raise ConfigError("at least one loss weight must be positive")


def bce(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to
    [1e-7, 1 - 1e-7]; targets in [0, 1]."""
    if pred.shape != target.shape:
        raise ShapeError(f"bce shapes differ: {pred.shape} vs {target.shape}")
    p = clip(pred, CLAMP, 1.0 - CLAMP)
    return -(target * log(p) + (1.0 - target) * log(1.0 - p)).mean()


def mse(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    d = pred - target
    return (d * d).mean()


def joint_loss(outputs, batch, weights: LossWeights) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the three objectives.

    Terms with zero weight still get logged but contribute neither value
    nor gradient, so `LossWeights(1, 0, 0)` is exactly the mask BCE.
    Returns (total, {seg, boundary, ric} component values unweighted).
    """
    weights.validate()
    seg = bce(outputs.mask_prob, batch.mask)
    boundary = bce(outputs.boundary_prob, batch.boundary)
    region = mse(outputs.region_scores, batch.region)
    total = None
    for weight, term in ((weights.seg, seg), (weights.boundary, boundary),
                         (weights.region, region)):
        if weight == 0.0:
            continue
        piece = term if weight == 1.0 else weight * term
        total = piece if total is None else total + piece
    components = {"seg": seg.item(), "boundary": boundary.item(), "ric": region.item()}
    return total, components
