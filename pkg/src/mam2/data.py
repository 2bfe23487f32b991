"""Synthetic moving-shapes videos, clip sampling and the on-disk corpus layout.

Corpus layout::

    <root>/clips/<split>/<index>.tnsr   one T x C x H x W float32 clip each
    <root>/labels.csv                   index,class_id (indices unique across splits)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import RangeError, UsageError
from .tensorfile import read_array, write_array

CLASS_NAMES = ("right-drift", "left-drift", "down-drift", "static")
# (dy, dx) in pixels per frame
_VELOCITY = {0: (0, 1), 1: (0, -1), 2: (1, 0), 3: (0, 0)}
NUM_CLASSES = len(CLASS_NAMES)


@dataclass
class VideoClip:
    frames: np.ndarray  # T x C x H x W, values in [0, 1]
    label: int | None = None
    source_stride: int = 1
    indices: tuple[int, ...] = field(default=())
    box: tuple[int, int, int, int] | None = None  # rectangle (y, x, h, w) in the first frame
    color: tuple[float, float, float] | None = None

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def C(self) -> int:
        return self.frames.shape[1]


def _texture(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    coarse = rng.uniform(0.2, 0.6, size=(3, 4, 4))
    rows = np.arange(H) * 4 // H
    cols = np.arange(W) * 4 // W
    bg = coarse[:, rows][:, :, cols]
    bg = bg + rng.uniform(-0.05, 0.05, size=(3, H, W))
    return np.clip(bg, 0.0, 1.0)


def generate_moving_shapes(seed: int, class_id: int, T: int, H: int, W: int) -> VideoClip:
    """A coloured rectangle on a textured background, drifting 1 px/frame.

    The drift direction is the only thing that depends on ``class_id``;
    colour, size, position and background are drawn from the same
    distribution for every class. The rectangle wraps around the borders.
    """
    if class_id not in _VELOCITY:
        raise UsageError(f"class_id must be one of {sorted(_VELOCITY)}, got {class_id}")
    if H < 16 or W < 16:
        raise UsageError(f"frames must be at least 16x16, got {H}x{W}")
    if T < 2:
        raise UsageError(f"need at least 2 frames, got {T}")
    rng = np.random.default_rng(seed)
    bg = _texture(rng, H, W)
    color = rng.uniform(0.0, 1.0, size=3)
    rh = int(rng.integers(H // 4, H // 2 + 1))
    rw = int(rng.integers(W // 4, W // 2 + 1))
    y0 = int(rng.integers(0, H))
    x0 = int(rng.integers(0, W))
    dy, dx = _VELOCITY[class_id]

    frames = np.empty((T, 3, H, W), dtype=np.float32)
    for t in range(T):
        frame = bg.copy()
        ys = (y0 + dy * t + np.arange(rh)) % H
        xs = (x0 + dx * t + np.arange(rw)) % W
        frame[:, ys[:, None], xs[None, :]] = color[:, None, None]
        frames[t] = frame
    return VideoClip(frames=frames, label=class_id, source_stride=1, indices=tuple(range(T)),
                     box=(y0, x0, rh, rw), color=tuple(float(c) for c in color))


def sample_clip(frames: Sequence[np.ndarray] | np.ndarray, start: int, stride: int, T: int,
                label: int | None = None) -> VideoClip:
    """Dense sampling: frames ``start, start + stride, ...`` (``T`` of them)."""
    if stride < 1 or T < 1 or start < 0:
        raise UsageError(f"invalid sampling start={start} stride={stride} T={T}")
    required = start + (T - 1) * stride + 1
    available = len(frames)
    if required > available:
        raise RangeError(f"sampling start={start}, stride={stride}, T={T} needs {required} "
                         f"source frames, only {available} available")
    idx = tuple(range(start, required, stride))
    clip = np.stack([np.asarray(frames[i], dtype=np.float32) for i in idx])
    return VideoClip(frames=clip, label=label, source_stride=stride, indices=idx)


def synthetic_clip(seed: int, class_id: int, T: int, size: int, stride: int) -> VideoClip:
    """Render a source video just long enough and sample a strided clip from it."""
    source = generate_moving_shapes(seed, class_id, (T - 1) * stride + 1, size, size)
    return sample_clip(source.frames, 0, stride, T, label=class_id)


def clip_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def make_corpus(root, n_train: int, n_val: int, T: int, size: int, stride: int,
                seed: int = 0) -> Path:
    """Write a class-balanced labelled corpus (class = index mod 4)."""
    root = Path(root)
    rows = []
    index = 0
    for split, count in (("train", n_train), ("val", n_val)):
        split_dir = root / "clips" / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for _ in range(count):
            cls = index % NUM_CLASSES
            clip = synthetic_clip(clip_seed(seed, index), cls, T, size, stride)
            write_array(split_dir / f"{index}.tnsr", clip.frames)
            rows.append((index, cls))
            index += 1
    with open(root / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "class_id"])
        writer.writerows(rows)
    return root


def read_labels(root) -> dict[int, int]:
    with open(Path(root) / "labels.csv", newline="") as fh:
        return {int(r["index"]): int(r["class_id"]) for r in csv.DictReader(fh)}


def load_split(root, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(clips N x T x C x H x W, labels N)`` ordered by index."""
    root = Path(root)
    split_dir = root / "clips" / split
    if not split_dir.is_dir():
        raise UsageError(f"no split directory {split_dir}")
    labels = read_labels(root)
    indices = sorted(int(p.stem) for p in split_dir.glob("*.tnsr"))
    if not indices:
        raise UsageError(f"split {split!r} under {root} is empty")
    clips = np.stack([read_array(split_dir / f"{i}.tnsr") for i in indices])
    return clips, np.array([labels[i] for i in indices], dtype=np.int64)
