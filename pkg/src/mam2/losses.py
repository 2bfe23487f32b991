"""Alignment, appearance, motion and hybrid objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DimensionError, NumericError, UsageError
from .numerics import Tensor

DEFAULT_ALPHA = 2.0


@dataclass(frozen=True)
class LossBundle:
    appearance: float
    motion: float
    alignment: float
    total: float
    alpha: float

    @classmethod
    def from_parts(cls, appearance: float, motion: float, alignment: float,
                   alpha: float = DEFAULT_ALPHA) -> "LossBundle":
        appearance, motion, alignment = float(appearance), float(motion), float(alignment)
        return cls(appearance, motion, alignment, hybrid_loss(appearance, motion, alignment, alpha), alpha)


def alignment_loss(r: Tensor, r_hat) -> Tensor:
    """Mean over tokens of ``||r_p - r_hat_p||^2``."""
    r_hat = nx.as_tensor(r_hat)
    if r.shape != r_hat.shape:
        raise DimensionError(f"alignment loss: {r.shape} vs {r_hat.shape}")
    if r.size == 0:
        raise UsageError("alignment loss over an empty masked set")
    return nx.squared_norm_mean(r, r_hat)


def appearance_loss(logits: Tensor, targets) -> Tensor:
    """Softmax cross-entropy averaged over masked tokens."""
    targets = np.asarray(getattr(targets, "tokens", targets))
    return nx.cross_entropy(logits, targets)


def motion_loss(pred: Tensor, target, reduction: str = "patch") -> Tensor:
    """Mean over patches of ``||D_p - D_hat_p||^2``.

    ``reduction="element"`` divides further by the per-patch size, i.e.
    a plain element-wise MSE.
    """
    target = nx.as_tensor(getattr(target, "diffs", target))
    if pred.shape != target.shape:
        raise DimensionError(f"motion loss: prediction {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise UsageError("motion loss over an empty M' set")
    loss = nx.squared_norm_mean(pred, target)
    if reduction == "patch":
        return loss
    if reduction == "element":
        return nx.mul(loss, 1.0 / pred.shape[-1])
    raise UsageError(f"mse_reduction must be 'patch' or 'element', got {reduction!r}")


def _finite(x) -> bool:
    value = x.item() if isinstance(x, Tensor) else float(x)
    return math.isfinite(value)


def hybrid_loss(appearance, motion, alignment, alpha: float = DEFAULT_ALPHA):
    """``appearance + motion + alpha * alignment``; works on floats or tensors."""
    for name, part in (("appearance", appearance), ("motion", motion), ("alignment", alignment)):
        if not _finite(part):
            raise NumericError(f"{name} loss is not finite")
    if alpha < 0:
        raise UsageError(f"alpha must be non-negative, got {alpha}")
    if isinstance(appearance, Tensor):
        return nx.add(nx.add(appearance, motion), nx.mul(alignment, alpha))
    return (appearance + motion) + alpha * alignment
