"""Transformer blocks over token grids.

Parameters live in one flat ``{name: Tensor}`` dict; every block reads its
tensors under a name prefix such as ``"encoder.3."``. All blocks are
pre-norm residual: ``x + sublayer(LN(x))``.
"""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .errors import DimensionError, UsageError
from .numerics import Tensor

Params = dict  # str -> Tensor

ATTN_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


def _param(data, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_linear(rng, fan_in: int, fan_out: int, prefix: str, bias: bool = True) -> Params:
    p = {prefix + "weight": _param(xavier(rng, fan_in, fan_out), prefix + "weight")}
    if bias:
        p[prefix + "bias"] = _param(np.zeros(fan_out), prefix + "bias")
    return p


def init_layer_norm(D: int, prefix: str) -> Params:
    return {prefix + "gamma": _param(np.ones(D), prefix + "gamma"),
            prefix + "beta": _param(np.zeros(D), prefix + "beta")}


def init_attention(rng, D: int, prefix: str) -> Params:
    p = {}
    for w, b in (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")):
        p[prefix + w] = _param(xavier(rng, D, D), prefix + w)
        p[prefix + b] = _param(np.zeros(D), prefix + b)
    return p


def init_mlp(rng, D: int, hidden: int, prefix: str) -> Params:
    return {**init_linear(rng, D, hidden, prefix + "fc1."), **init_linear(rng, hidden, D, prefix + "fc2.")}


def init_factorized_block(rng, D: int, hidden: int, prefix: str) -> Params:
    return {**init_layer_norm(D, prefix + "ln_t."), **init_attention(rng, D, prefix + "attn_t."),
            **init_layer_norm(D, prefix + "ln_s."), **init_attention(rng, D, prefix + "attn_s."),
            **init_layer_norm(D, prefix + "ln_m."), **init_mlp(rng, D, hidden, prefix + "mlp.")}


def init_joint_block(rng, D: int, hidden: int, prefix: str) -> Params:
    return {**init_layer_norm(D, prefix + "ln_a."), **init_attention(rng, D, prefix + "attn."),
            **init_layer_norm(D, prefix + "ln_m."), **init_mlp(rng, D, hidden, prefix + "mlp.")}


def init_cross_block(rng, D: int, hidden: int, prefix: str) -> Params:
    return {**init_layer_norm(D, prefix + "ln_q."), **init_layer_norm(D, prefix + "ln_kv."),
            **init_attention(rng, D, prefix + "attn."),
            **init_layer_norm(D, prefix + "ln_m."), **init_mlp(rng, D, hidden, prefix + "mlp.")}


# -- primitives ---------------------------------------------------------------

def linear(x: Tensor, p: Params, prefix: str) -> Tensor:
    out = nx.matmul(x, p[prefix + "weight"])
    bias = p.get(prefix + "bias")
    return out if bias is None else nx.add(out, bias)


def norm(x: Tensor, p: Params, prefix: str, eps: float = 1e-6) -> Tensor:
    return nx.layer_norm(x, p[prefix + "gamma"], p[prefix + "beta"], eps)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, L, D = x.shape
    return nx.swapaxes(x.reshape(*lead, L, heads, D // heads), -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, L, dh = x.shape
    return nx.swapaxes(x, -3, -2).reshape(*lead, L, h * dh)


def attention(q_in: Tensor, kv_in: Tensor, p: Params, prefix: str, heads: int,
              return_weights: bool = False):
    """Multi-head attention of ``q_in (..., L, D)`` over ``kv_in (..., S, D)``."""
    D = q_in.shape[-1]
    if kv_in.shape[-1] != D or q_in.shape[:-2] != kv_in.shape[:-2]:
        raise DimensionError(f"attention: queries {q_in.shape} vs keys/values {kv_in.shape}")
    if D % heads:
        raise DimensionError(f"width {D} is not divisible by {heads} heads")
    if kv_in.shape[-2] == 0:
        raise UsageError("attention over an empty key/value set")
    q = _split_heads(nx.add(nx.matmul(q_in, p[prefix + "wq"]), p[prefix + "bq"]), heads)
    k = _split_heads(nx.add(nx.matmul(kv_in, p[prefix + "wk"]), p[prefix + "bk"]), heads)
    v = _split_heads(nx.add(nx.matmul(kv_in, p[prefix + "wv"]), p[prefix + "bv"]), heads)
    scores = nx.mul(nx.matmul(q, nx.swapaxes(k, -1, -2)), 1.0 / math.sqrt(D // heads))
    weights = nx.softmax(scores)
    mixed = _merge_heads(nx.matmul(weights, v))
    out = nx.add(nx.matmul(mixed, p[prefix + "wo"]), p[prefix + "bo"])
    return (out, weights.data) if return_weights else out


def mha_spatial(x: Tensor, p: Params, prefix: str, heads: int, return_weights: bool = False):
    """Self-attention among the tokens of each frame: ``x`` is ``(..., T, N, D)``."""
    return attention(x, x, p, prefix, heads, return_weights)


def mha_temporal(x: Tensor, p: Params, prefix: str, heads: int, return_weights: bool = False):
    """Self-attention across frames at each fixed spatial index."""
    xt = nx.swapaxes(x, -3, -2)
    res = attention(xt, xt, p, prefix, heads, return_weights)
    if return_weights:
        return nx.swapaxes(res[0], -3, -2), res[1]
    return nx.swapaxes(res, -3, -2)


def mlp(x: Tensor, p: Params, prefix: str) -> Tensor:
    """Linear D->hidden, GELU, linear hidden->D."""
    return linear(nx.gelu(linear(x, p, prefix + "fc1.")), p, prefix + "fc2.")


# -- blocks -------------------------------------------------------------------

def factorized_block(x: Tensor, p: Params, prefix: str, heads: int, eps: float = 1e-6,
                     skip_first_frame_spatial: bool = False) -> Tensor:
    """Temporal attention, then spatial attention, then MLP, each pre-norm residual.

    With ``skip_first_frame_spatial`` the first temporal slot (a [CLS]
    token row) takes part in temporal attention and the MLP but not in
    spatial attention.
    """
    if x.ndim < 3:
        raise DimensionError(f"factorized block expects (..., T, N, D), got {x.shape}")
    x = nx.add(x, mha_temporal(norm(x, p, prefix + "ln_t.", eps), p, prefix + "attn_t.", heads))
    if skip_first_frame_spatial:
        head, rest = x[..., :1, :, :], x[..., 1:, :, :]
        rest = nx.add(rest, mha_spatial(norm(rest, p, prefix + "ln_s.", eps), p, prefix + "attn_s.", heads))
        x = nx.concat([head, rest], axis=-3)
    else:
        x = nx.add(x, mha_spatial(norm(x, p, prefix + "ln_s.", eps), p, prefix + "attn_s.", heads))
    return nx.add(x, mlp(norm(x, p, prefix + "ln_m.", eps), p, prefix + "mlp."))


def joint_block(x: Tensor, p: Params, prefix: str, heads: int, eps: float = 1e-6) -> Tensor:
    """Joint space-time self-attention over a flat ``(..., L, D)`` token set, then MLP."""
    h = norm(x, p, prefix + "ln_a.", eps)
    x = nx.add(x, attention(h, h, p, prefix + "attn.", heads))
    return nx.add(x, mlp(norm(x, p, prefix + "ln_m.", eps), p, prefix + "mlp."))


def cross_attn_block(queries: Tensor, kv: Tensor, p: Params, prefix: str, heads: int,
                     eps: float = 1e-6) -> Tensor:
    """``q + CrossAttn(LN(q), LN(kv))`` then ``+ MLP(LN(.))``; keys span all of ``kv`` jointly."""
    if kv.shape[-2] == 0:
        raise UsageError("cross attention needs at least one visible token")
    att = attention(norm(queries, p, prefix + "ln_q.", eps), norm(kv, p, prefix + "ln_kv.", eps),
                    p, prefix + "attn.", heads)
    x = nx.add(queries, att)
    return nx.add(x, mlp(norm(x, p, prefix + "ln_m.", eps), p, prefix + "mlp."))
