"""Differentiable primitives.

Broadcasting is limited to the trailing-dimension affine case: a right
operand whose shape is a suffix of the left operand's shape (biases,
per-feature scales, a spatial embedding table added under a leading time
axis). Anything else must be spelled out with :func:`broadcast_to`.
"""

from __future__ import annotations

import builtins
import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from ..errors import DimensionError, UsageError
from .tensor import Tensor, as_tensor, make_result

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead > 0 else g


def _check_trailing(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not equal and the right "
                         "operand is not a trailing-dimension suffix of the left")


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return make_result(a.data + a.dtype.type(c), (a,), lambda g: (g,))
    if b.ndim > a.ndim:
        a, b = b, a
    _check_trailing(a, b, "add")
    shape_b = b.shape
    return make_result(a.data + b.data, (a, b), lambda g: (g, _sum_to(g, shape_b)))


def sub(a, b) -> Tensor:
    return add(a, neg(b) if isinstance(b, Tensor) else -float(b))


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = a.dtype.type(float(b))
        return make_result(a.data * c, (a,), lambda g: (g * c,))
    if b.ndim > a.ndim:
        a, b = b, a
    _check_trailing(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return g * bd, _sum_to(g * ad, bd.shape)

    return make_result(ad * bd, (a, b), back)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def back(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return make_result(x * cdf, (a,), back)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(..., m, k) @ (k, n)`` or batched ``(..., m, k) @ (..., k, n)``."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        # one 2-D GEMM over the flattened leading axes is about twice as fast as numpy's batched loop
        k, n = bd.shape
        a2 = ad.reshape(-1, k)

        def back(g):
            g2 = g.reshape(-1, n)
            return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2

        return make_result((a2 @ bd).reshape(ad.shape[:-1] + (n,)), (a, b), back)
    if a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")

    def back_batched(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return make_result(np.matmul(ad, bd), (a, b), back_batched)


# -- shape manipulation -------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from exc
    src = a.shape
    return make_result(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(x) % a.ndim for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose axes {axes} are not a permutation for rank {a.ndim}")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return make_result(out, (a,), lambda g: (np.ascontiguousarray(np.transpose(g, inverse)),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def getitem(a: Tensor, key) -> Tensor:
    """Basic slicing only (ints and slices); use :func:`select` for index arrays."""
    keys = key if isinstance(key, tuple) else (key,)
    for k in keys:
        if not (isinstance(k, (int, slice, np.integer)) or k is Ellipsis):
            raise UsageError("getitem supports ints, slices and Ellipsis only")
    out = np.array(a.data[key], copy=True)
    src_shape, dtype = a.shape, a.dtype

    def back(g):
        full = np.zeros(src_shape, dtype=dtype)
        full[key] = g
        return (full,)

    return make_result(out, (a,), back)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise UsageError("concat of an empty sequence")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, cuts, axis=ax))

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, back)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast; ``a`` must have the target rank with size-1 axes to expand."""
    shape = tuple(shape)
    if a.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise DimensionError(f"cannot broadcast {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    return make_result(out, (a,), lambda g: (g.sum(axis=axes, keepdims=True),))


def select(a: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis`` with ``np.take_along_axis`` semantics.

    ``index`` has the rank of ``a``; its other axes may be 1 to broadcast.
    """
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != a.ndim:
        raise DimensionError(f"select: index rank {index.ndim} != operand rank {a.ndim}")
    ax = axis % a.ndim
    if index.size and (index.min() < 0 or index.max() >= a.shape[ax]):
        raise DimensionError(f"select: index out of range for axis of size {a.shape[ax]}")
    try:
        out = np.take_along_axis(a.data, index, axis=ax)
    except ValueError as exc:
        raise DimensionError(f"select: index shape {index.shape} incompatible with {a.shape}") from exc
    src_shape, dtype = a.shape, a.dtype
    srt = np.sort(index, axis=ax)
    unique = bool(np.all(np.diff(srt, axis=ax) != 0))

    def back(g):
        full = np.zeros(src_shape, dtype=dtype)
        if unique:
            np.put_along_axis(full, np.broadcast_to(index, g.shape), g, axis=ax)
        else:
            idx = np.broadcast_to(index, g.shape)
            grids = list(np.indices(g.shape, sparse=True))
            grids[ax] = idx
            np.add.at(full, tuple(grids), g)
        return (full,)

    return make_result(out, (a,), back)


def stop_gradient(a: Tensor) -> Tensor:
    return a.detach()


# -- reductions ---------------------------------------------------------------

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    src_shape, dtype = a.shape, a.dtype
    return make_result(np.asarray(a.data.sum(), dtype=dtype), (a,),
                       lambda g: (np.full(src_shape, g, dtype=dtype),))


def mean(a: Tensor) -> Tensor:
    return mul(sum(a), 1.0 / a.size)


def sum_lastdim(a: Tensor) -> Tensor:
    out = a.data.sum(axis=-1)
    return make_result(out, (a,), lambda g: (np.repeat(g[..., None], a.shape[-1], axis=-1),))


# -- normalisation and probabilities -------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result(y, (a,), back)


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return make_result(out, (a,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply ``gamma``/``beta``."""
    d = x.shape[-1]
    if d < 2:
        raise DimensionError("layer_norm needs a feature axis of size >= 2")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} != ({d},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * rstd
    gd = gamma.data

    def back(g):
        dxhat = g * gd
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, d)
        return dx, (g2 * xhat.reshape(-1, d)).sum(axis=0), g2.sum(axis=0)

    return make_result(xhat * gd + beta.data, (x, gamma, beta), back)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of integer ``targets`` over all leading positions."""
    targets = np.asarray(targets)
    k = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"cross_entropy: targets {targets.shape} vs logits {logits.shape}")
    if targets.size == 0:
        raise UsageError("cross_entropy over zero positions")
    if targets.min() < 0 or targets.max() >= k:
        raise UsageError(f"cross_entropy: target ids must lie in [0, {k})")
    x = logits.data.reshape(-1, k)
    t = targets.reshape(-1).astype(np.intp)
    n = t.shape[0]
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    nll = np.log(s[:, 0]) - shifted[rows, t]
    loss = np.asarray(nll.mean(), dtype=logits.dtype)
    src_shape = logits.shape

    def back(g):
        p = e / s
        p[rows, t] -= 1.0
        p *= g / n
        return (p.reshape(src_shape),)

    return make_result(loss, (logits,), back)


def squared_norm_mean(a: Tensor, b: Tensor) -> Tensor:
    """Mean over leading positions of the squared L2 distance along the last axis."""
    if a.shape != b.shape:
        raise DimensionError(f"squared_norm_mean: shapes {a.shape} and {b.shape} differ")
    n = builtins.max(1, a.size // a.shape[-1]) if a.ndim else 1
    d = sub(a, b)
    return mul(sum(mul(d, d)), 1.0 / n)
