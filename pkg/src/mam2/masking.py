"""Tube and cube masks over a T x N patch grid, and visible/masked partitioning."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import DimensionError, StructureError, UsageError
from .numerics import Tensor


@dataclass(frozen=True)
class MaskSpec:
    kind: str  # "tube" | "cube"
    rho: float
    N: int
    T: int
    frames: tuple  # T sorted int arrays of masked spatial indices
    grid: tuple[int, int] | None = None

    @property
    def temporally_constant(self) -> bool:
        first = self.frames[0]
        return all(np.array_equal(first, f) for f in self.frames[1:])

    def require_tube(self, what: str = "this operation") -> None:
        if not self.temporally_constant:
            raise StructureError(f"{what} needs a mask whose masked spatial set is identical "
                                 f"in every frame ({self.kind} mask given)")

    @property
    def masked_spatial(self) -> np.ndarray:
        self.require_tube("masked_spatial")
        return self.frames[0]

    @property
    def visible_spatial(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.N), self.masked_spatial)

    @property
    def num_masked_per_frame(self) -> int:
        return len(self.frames[0])

    @property
    def M(self) -> list[tuple[int, int]]:
        """All masked tokens as ``(t, j)``, frame-major then raster order."""
        return [(t, int(j)) for t in range(self.T) for j in self.frames[t]]

    @property
    def M_prime(self) -> list[tuple[int, int]]:
        """Masked tokens excluding the last frame."""
        return [(t, j) for t, j in self.M if t < self.T - 1]

    def frame_indices(self, which: str = "masked") -> np.ndarray:
        """``T x n`` index array of masked or visible spatial positions per frame."""
        if which == "masked":
            rows = list(self.frames)
        elif which == "visible":
            rows = [np.setdiff1d(np.arange(self.N), f) for f in self.frames]
        else:
            raise UsageError(f"which must be 'masked' or 'visible', got {which!r}")
        if len({len(r) for r in rows}) != 1:
            raise StructureError("frames have different numbers of masked tokens")
        return np.stack(rows).astype(np.int64)


def masked_count(rho: float, N: int) -> int:
    """Nearest-integer ``rho * N`` (halves round up)."""
    return int(math.floor(rho * N + 0.5))


def _check_ratio(rho: float) -> None:
    if not 0.0 <= rho <= 1.0:
        raise UsageError(f"mask ratio must lie in [0, 1], got {rho}")


def tube_mask(N: int, T: int, rho: float, seed) -> MaskSpec:
    """One uniformly random spatial subset of size ``round(rho*N)``, shared by every frame."""
    _check_ratio(rho)
    rng = np.random.default_rng(seed)
    k = masked_count(rho, N)
    masked = np.sort(rng.permutation(N)[:k]).astype(np.int64)
    return MaskSpec("tube", rho, N, T, tuple(masked for _ in range(T)))


def cube_mask(N_h: int, N_w: int, T: int, rho: float, block_size: int, seed) -> MaskSpec:
    """Block-wise 2-D mask repeated along time.

    Rectangles with sides in ``[ceil(block_size/2), block_size]`` are
    dropped at random until ``ceil(rho*N)`` cells are covered. The last
    rectangle is only partly kept (its new cells in raster order) so every
    cube mask at a given ratio has the same count and masks batch together.
    """
    _check_ratio(rho)
    if block_size < 1 or block_size > min(N_h, N_w):
        raise UsageError(f"block size {block_size} does not fit a {N_h}x{N_w} grid")
    rng = np.random.default_rng(seed)
    N = N_h * N_w
    target = math.ceil(rho * N - 1e-9)
    cells = np.zeros((N_h, N_w), dtype=bool)
    lo = (block_size + 1) // 2
    while cells.sum() < target:
        h = int(rng.integers(lo, block_size + 1))
        w = int(rng.integers(lo, block_size + 1))
        top = int(rng.integers(0, N_h - h + 1))
        left = int(rng.integers(0, N_w - w + 1))
        block = np.zeros_like(cells)
        block[top:top + h, left:left + w] = True
        fresh = np.flatnonzero((block & ~cells).reshape(-1))
        need = target - int(cells.sum())
        cells.reshape(-1)[fresh[:need]] = True
    masked = np.flatnonzero(cells.reshape(-1)).astype(np.int64)
    return MaskSpec("cube", rho, N, T, tuple(masked for _ in range(T)), grid=(N_h, N_w))


def make_mask(kind: str, N: int, T: int, rho: float, seed, grid: tuple[int, int] | None = None,
              block_size: int = 4) -> MaskSpec:
    if kind == "tube":
        return tube_mask(N, T, rho, seed)
    if kind == "cube":
        if grid is None:
            side = int(round(math.sqrt(N)))
            grid = (side, N // side)
        return cube_mask(grid[0], grid[1], T, rho, min(block_size, *grid), seed)
    raise UsageError(f"unknown mask kind {kind!r}")


def batch_indices(masks: Sequence[MaskSpec], which: str) -> np.ndarray:
    """Stack per-sample ``T x n`` index arrays into ``B x T x n``."""
    arrays = [m.frame_indices(which) for m in masks]
    if len({a.shape for a in arrays}) != 1:
        raise StructureError("masks in a batch must have equal per-frame counts")
    return np.stack(arrays)


def gather_tokens(tokens: Tensor, index: np.ndarray) -> Tensor:
    """Pick ``index[..., t, :]`` spatial positions from ``tokens[..., t, :, :]``."""
    return nx.select(tokens, index[..., None], axis=-2)


def partition(tokens: Tensor, mask: MaskSpec) -> tuple[Tensor, list[tuple[int, int]]]:
    """Split a ``T x N x D`` (optionally batched) grid into visible tokens and masked positions."""
    T, N = tokens.shape[-3], tokens.shape[-2]
    if (T, N) != (mask.T, mask.N):
        raise DimensionError(f"mask is {mask.T}x{mask.N} but the grid is {T}x{N}")
    vis = mask.frame_indices("visible")
    lead = tokens.ndim - 3
    vis = vis.reshape((1,) * lead + vis.shape)
    return gather_tokens(tokens, vis), mask.M


MASKED_RGB = (220, 40, 40)
VISIBLE_RGB = (235, 235, 235)
GRID_RGB = (90, 90, 90)


def render_mask(mask: MaskSpec, cell: int = 8, frames: int | None = None) -> np.ndarray:
    """Draw one panel per frame, side by side: masked cells red, visible cells light grey.

    Returns ``H x W x 3`` uint8 with a one-pixel grid line between cells
    and a gap between frames.
    """
    grid = mask.grid
    if grid is None:
        side = math.isqrt(mask.N)
        if side * side != mask.N:
            raise UsageError(f"mask over {mask.N} positions has no grid shape to draw")
        grid = (side, side)
    gh, gw = grid
    n_frames = mask.T if frames is None else min(frames, mask.T)
    panel_h, panel_w = gh * cell + 1, gw * cell + 1
    gap = cell
    img = np.full((panel_h, n_frames * (panel_w + gap) - gap, 3), 255, dtype=np.uint8)
    for t in range(n_frames):
        flags = np.zeros(mask.N, dtype=bool)
        flags[mask.frames[t]] = True
        x0 = t * (panel_w + gap)
        panel = img[:, x0:x0 + panel_w]
        panel[:] = GRID_RGB
        for idx in range(mask.N):
            r, c = divmod(idx, gw)
            panel[r * cell + 1:(r + 1) * cell, c * cell + 1:(c + 1) * cell] = (
                MASKED_RGB if flags[idx] else VISIBLE_RGB)
    return img


def write_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6) for an ``H x W x 3`` uint8 image."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise UsageError(f"expected H x W x 3, got {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    data = open(path, "rb").read()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6" or parts[3] != b"255":
        raise UsageError(f"{path}: not a binary 8-bit PPM")
    w, h = int(parts[1]), int(parts[2])
    pixels = np.frombuffer(parts[4][:w * h * 3], dtype=np.uint8)
    return pixels.reshape(h, w, 3)
