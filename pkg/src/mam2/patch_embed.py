"""Patch extraction, linear patch embedding and separable positional embeddings.

A patch is flattened channel-major (``C x P x P``), which is the layout a
stride-``P`` convolution kernel of shape ``D x C x P x P`` would consume, so
the embedding matrix is exactly that convolution written as a matmul.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DimensionError, UsageError
from .numerics import Tensor


@dataclass
class PatchGrid:
    tokens: Tensor  # (..., T, N, D)
    P: int

    @property
    def T(self) -> int:
        return self.tokens.shape[-3]

    @property
    def N(self) -> int:
        return self.tokens.shape[-2]

    @property
    def D(self) -> int:
        return self.tokens.shape[-1]


@dataclass
class PosEmbeds:
    temporal: Tensor  # T x D
    spatial: Tensor  # N x D

    @classmethod
    def init(cls, T: int, N: int, D: int, rng: np.random.Generator, std: float = 0.02) -> "PosEmbeds":
        return cls(Tensor(rng.normal(0.0, std, size=(T, D)), requires_grad=True, name="pos.temporal"),
                   Tensor(rng.normal(0.0, std, size=(N, D)), requires_grad=True, name="pos.spatial"))


def patchify(frames, P: int) -> np.ndarray:
    """``(..., T, C, H, W)`` -> ``(..., T, N, C*P*P)`` with patches in raster order."""
    frames = getattr(frames, "frames", frames)
    frames = np.asarray(frames)
    if frames.ndim < 4:
        raise DimensionError(f"patchify expects (..., T, C, H, W), got {frames.shape}")
    *lead, T, C, H, W = frames.shape
    if P < 1 or H % P or W % P:
        raise UsageError(f"frame size {H}x{W} is not divisible by patch size {P}")
    gh, gw = H // P, W // P
    x = frames.reshape(*lead, T, C, gh, P, gw, P)
    n = len(lead)
    axes = tuple(range(n)) + tuple(n + a for a in (0, 2, 4, 1, 3, 5))
    x = np.transpose(x, axes)
    return np.ascontiguousarray(x.reshape(*lead, T, gh * gw, C * P * P))


def unpatchify(patches: np.ndarray, P: int, H: int, W: int, C: int = 3) -> np.ndarray:
    patches = np.asarray(patches)
    *lead, T, N, F = patches.shape
    gh, gw = H // P, W // P
    if gh * gw != N or F != C * P * P:
        raise DimensionError(f"cannot unpatchify {patches.shape} to {C}x{H}x{W} with P={P}")
    x = patches.reshape(*lead, T, gh, gw, C, P, P)
    n = len(lead)
    axes = tuple(range(n)) + tuple(n + a for a in (0, 3, 1, 4, 2, 5))
    return np.ascontiguousarray(np.transpose(x, axes).reshape(*lead, T, C, H, W))


def embed(patches, weight: Tensor, bias: Tensor, P: int | None = None) -> PatchGrid:
    """``tokens = patches @ weight + bias`` applied per patch."""
    patches = nx.as_tensor(patches)
    if weight.ndim != 2 or patches.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise DimensionError(f"embed: patches {patches.shape}, weight {weight.shape}, "
                             f"bias {bias.shape} are incompatible")
    if P is None:
        P = int(round((patches.shape[-1] / 3) ** 0.5))
    return PatchGrid(nx.add(nx.matmul(patches, weight), bias), P)


def add_pos(grid: PatchGrid | Tensor, pe: PosEmbeds) -> PatchGrid | Tensor:
    """``out[..., i, j, :] = in[..., i, j, :] + temporal[i] + spatial[j]``."""
    tokens = grid.tokens if isinstance(grid, PatchGrid) else grid
    T, N, D = tokens.shape[-3:]
    if pe.temporal.shape != (T, D) or pe.spatial.shape != (N, D):
        raise DimensionError(f"positional embeddings {pe.temporal.shape}/{pe.spatial.shape} "
                             f"do not match a {T}x{N}x{D} grid")
    table = nx.add(nx.broadcast_to(pe.temporal.reshape(T, 1, D), (T, N, D)), pe.spatial)
    out = nx.add(tokens, table)
    return PatchGrid(out, grid.P) if isinstance(grid, PatchGrid) else out


def position_table(pe: PosEmbeds, t_index: np.ndarray, s_index: np.ndarray) -> Tensor:
    """Sum ``temporal[t] + spatial[s]`` for paired index arrays of any common shape."""
    t_index = np.asarray(t_index)
    s_index = np.asarray(s_index)
    D = pe.temporal.shape[1]
    shape = t_index.shape
    et = nx.select(pe.temporal, t_index.reshape(-1, 1), axis=0)
    es = nx.select(pe.spatial, s_index.reshape(-1, 1), axis=0)
    return nx.add(et, es).reshape(*shape, D)
