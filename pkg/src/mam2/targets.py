"""Supervision signals: appearance tokens, RGB-difference and flow motion targets, clip order."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import DimensionError, FormatError, UsageError
from .masking import MaskSpec
from .patch_embed import patchify
from .tensorfile import read_array

GRID_VOCAB = 16384


@dataclass
class TokenTargets:
    tokens: np.ndarray  # integer ids, T x N (or any leading shape)
    K: int

    def __post_init__(self):
        if self.tokens.size and (self.tokens.min() < 0 or self.tokens.max() >= self.K):
            raise UsageError(f"token ids must lie in [0, {self.K})")


@dataclass
class MotionTarget:
    diffs: np.ndarray  # (T-1) x |masked per frame| x (P*P*C)


class Tokenizer(Protocol):
    name: str
    K: int

    def __call__(self, patches: np.ndarray, P: int, C: int) -> np.ndarray:
        """Map flattened ``C*P*P`` patches (any leading shape) to ids in ``[0, K)``."""


class GridTokenizer:
    """Deterministic 16384-way stand-in for a learned visual tokenizer.

    ``id = hue*4096 + l0*512 + l1*64 + l2*8 + l3``. The ``l_i`` are 3-bit
    mean-luma levels of the 2x2 sub-cells (top-left, top-right,
    bottom-left, bottom-right), luma being ``(r+g+b)/3``. ``hue`` is the
    index of the largest patch-mean channel, or 3 when the channel means
    are within 0.05 of each other.
    """

    name = "grid16384"
    K = GRID_VOCAB

    def __call__(self, patches: np.ndarray, P: int, C: int = 3) -> np.ndarray:
        patches = np.asarray(patches, dtype=np.float64)
        if C != 3 or patches.shape[-1] != C * P * P:
            raise DimensionError(f"grid tokenizer needs RGB patches of size 3*{P}*{P}")
        if P % 2:
            raise UsageError(f"grid tokenizer needs an even patch size, got {P}")
        lead = patches.shape[:-1]
        x = patches.reshape(-1, C, P, P)
        h = P // 2
        luma = x.mean(axis=1)
        cells = luma.reshape(-1, 2, h, 2, h).mean(axis=(2, 4)).reshape(-1, 4)
        levels = np.minimum(7, np.floor(8.0 * cells)).astype(np.int64)
        channel_means = x.mean(axis=(2, 3))
        spread = channel_means.max(axis=1) - channel_means.min(axis=1)
        hue = np.where(spread < 0.05, 3, channel_means.argmax(axis=1)).astype(np.int64)
        ids = hue * 4096 + levels[:, 0] * 512 + levels[:, 1] * 64 + levels[:, 2] * 8 + levels[:, 3]
        return ids.reshape(lead)


class LumaTokenizer:
    """``K``-level quantiser of the patch-mean luma; for small-vocabulary configs."""

    name = "luma"

    def __init__(self, K: int):
        if K < 2:
            raise UsageError("luma tokenizer needs K >= 2")
        self.K = K

    def __call__(self, patches: np.ndarray, P: int, C: int = 3) -> np.ndarray:
        patches = np.asarray(patches, dtype=np.float64)
        mean = patches.mean(axis=-1)
        return np.clip(np.floor(self.K * mean), 0, self.K - 1).astype(np.int64)


def get_tokenizer(name: str, K: int) -> Tokenizer:
    if name == "grid16384":
        if K != GRID_VOCAB:
            raise UsageError(f"tokenizer 'grid16384' has K={GRID_VOCAB}, config asks for K={K}")
        return GridTokenizer()
    if name == "luma":
        return LumaTokenizer(K)
    raise UsageError(f"unknown tokenizer {name!r}")


def quantize_patch(patch: np.ndarray) -> int:
    """Token id of a single ``C x P x P`` patch under :class:`GridTokenizer`."""
    patch = np.asarray(patch)
    C, P, _ = patch.shape
    return int(GridTokenizer()(patch.reshape(1, -1), P, C)[0])


def token_targets(frames, P: int, tokenizer: Tokenizer) -> TokenTargets:
    frames = np.asarray(getattr(frames, "frames", frames))
    C = frames.shape[-3]
    return TokenTargets(tokenizer(patchify(frames, P), P, C), tokenizer.K)


def rgb_diff_patches(patches: np.ndarray, masked: np.ndarray) -> np.ndarray:
    """Adjacent-frame differences of patchified frames at masked spatial indices.

    ``patches`` is ``(..., T, N, F)`` and ``masked`` is ``(..., n)``; the
    result is ``(..., T-1, n, F)`` with entry ``t`` equal to
    ``patches[t+1] - patches[t]``, attributed to the masked tokens of frame ``t``.
    """
    idx = np.asarray(masked)[..., None, :, None]
    picked = np.take_along_axis(patches, idx, axis=-2)
    return picked[..., 1:, :, :] - picked[..., :-1, :, :]


def rgb_diff_target(clip, mask: MaskSpec, P: int) -> MotionTarget:
    frames = np.asarray(getattr(clip, "frames", clip))
    if frames.shape[0] < 2:
        raise UsageError("an RGB-difference target needs at least 2 frames")
    mask.require_tube("rgb_diff_target")
    if frames.shape[0] != mask.T:
        raise DimensionError(f"clip has {frames.shape[0]} frames, mask has {mask.T}")
    return MotionTarget(rgb_diff_patches(patchify(frames, P), mask.masked_spatial))


def clip_order_label(permutation) -> int:
    """0 for the identity order of the two temporal halves, 1 for the swapped order."""
    perm = tuple(int(p) for p in permutation)
    if perm == (0, 1):
        return 0
    if perm == (1, 0):
        return 1
    raise UsageError(f"expected a permutation of two halves, got {permutation}")


def half_swap_order(T: int, label: int) -> np.ndarray:
    """Frame order realising ``label`` for a ``T``-frame sequence."""
    if T % 2:
        raise UsageError(f"clip-order prediction needs an even number of frames, got {T}")
    order = np.arange(T)
    return np.concatenate([order[T // 2:], order[:T // 2]]) if label else order


def sample_clip_order(rng: np.random.Generator, size=None):
    """Draw clip-order labels uniformly from {0, 1}."""
    return rng.integers(0, 2, size=size)


def flow_patches(flow: np.ndarray, masked: np.ndarray, P: int) -> np.ndarray:
    """Patchify ``(..., T-1, 2, H, W)`` flow and keep masked spatial indices."""
    patches = patchify(flow, P)
    idx = np.asarray(masked)[..., None, :, None]
    return np.take_along_axis(patches, idx, axis=-2)


def load_flow_target(path, mask: MaskSpec, P: int) -> MotionTarget:
    flow = read_array(path)
    if flow.ndim != 4 or flow.shape[1] != 2:
        raise FormatError("extents", f"flow file must be (T-1) x 2 x H x W, got {flow.shape}")
    if flow.shape[0] != mask.T - 1:
        raise FormatError("extents", f"flow has {flow.shape[0]} steps, mask expects {mask.T - 1}")
    H, W = flow.shape[2:]
    if H % P or W % P or (H // P) * (W // P) != mask.N:
        raise FormatError("extents", f"flow frames {H}x{W} do not tile into {mask.N} patches of {P}")
    mask.require_tube("load_flow_target")
    return MotionTarget(flow_patches(flow.astype(np.float32), mask.masked_spatial, P))
