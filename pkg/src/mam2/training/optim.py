"""AdamW with decoupled weight decay, and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..errors import NumericError
from ..numerics import Tensor

_NO_DECAY_SUFFIXES = ("bias", "gamma", "beta", ".bq", ".bk", ".bv", ".bo")
_NO_DECAY_PREFIXES = ("pos.", "pos_dec.", "mask_query", "clip_order.cls")


def default_decay(name: str) -> bool:
    """Weight decay applies to matrices only, not biases, norms, embeddings or query vectors."""
    return not (name.endswith(_NO_DECAY_SUFFIXES) or name.startswith(_NO_DECAY_PREFIXES))


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamWState,
               lr: float, betas: tuple[float, float] = (0.9, 0.95), weight_decay: float = 0.05,
               eps: float = 1e-8, decay: Callable[[str], bool] | None = None) -> AdamWState:
    """One in-place AdamW update; parameters without a gradient are left alone.

    Raises :class:`NumericError` before touching any parameter if a
    gradient is not finite.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    decay = decay or (lambda name: True)
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay and decay(name):
            p.data -= p.data.dtype.type(lr * weight_decay) * p.data
        p.data -= p.data.dtype.type(lr) * update.astype(p.data.dtype, copy=False)
    return state


def scaled_lr(base_lr: float, batch_size: int) -> float:
    """Linear scaling rule: ``base_lr * batch_size / 256``."""
    return base_lr * batch_size / 256.0


def lr_at(step: int, peak_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup from 0 to ``peak_lr``, then half-cosine decay to 0 at ``total_steps``."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if warmup_steps > 0 and step < warmup_steps:
        return peak_lr * step / warmup_steps
    decay_steps = total_steps - warmup_steps
    if decay_steps <= 0 or step >= total_steps:
        return 0.0 if step >= total_steps else peak_lr
    progress = (step - warmup_steps) / decay_steps
    return 0.5 * peak_lr * (1.0 + math.cos(math.pi * progress))
