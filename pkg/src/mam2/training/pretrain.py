"""The pre-training loop.

Randomness per step comes from one generator seeded with ``(seed, step)``,
drawn in a fixed order: the batch (class then clip seed per sample, or
corpus indices), then the forward seed, from which the model draws a mask
seed and then a clip-order shuffle seed per sample. Runs are therefore
reproducible bit-for-bit and resumable from any checkpoint.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import numerics as nx
from ..data import NUM_CLASSES, load_split, synthetic_clip
from ..errors import NumericError, UsageError
from ..model import MAM2
from .checkpoint import latest_checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, dump_config
from .optim import AdamWState, adamw_step, default_decay, lr_at

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "lr", "L_app", "L_mot", "L_align", "L_total")


class SyntheticSource:
    """Fresh moving-shapes clips every step."""

    def __init__(self, config: TrainConfig):
        m = config.model
        if m.H != m.W:
            raise UsageError("synthetic clips are square")
        self.T, self.size, self.stride = m.T, m.H, config.stride

    def __len__(self) -> int:
        return 0

    def sample(self, rng: np.random.Generator, batch: int) -> tuple[np.ndarray, np.ndarray]:
        clips, labels = [], []
        for _ in range(batch):
            cls = int(rng.integers(NUM_CLASSES))
            seed = int(rng.integers(2**63))
            clips.append(synthetic_clip(seed, cls, self.T, self.size, self.stride).frames)
            labels.append(cls)
        return np.stack(clips), np.array(labels)


class CorpusSource:
    """Clips drawn without replacement (within a batch) from a corpus split."""

    def __init__(self, root, split: str = "train"):
        self.clips, self.labels = load_split(root, split)

    def __len__(self) -> int:
        return len(self.clips)

    def sample(self, rng: np.random.Generator, batch: int) -> tuple[np.ndarray, np.ndarray]:
        idx = rng.choice(len(self.clips), size=batch, replace=batch > len(self.clips))
        return self.clips[idx], self.labels[idx]


def make_source(config: TrainConfig):
    if config.dataset == "synthetic":
        return SyntheticSource(config)
    if not Path(config.dataset).is_dir():
        raise UsageError(f"dataset {config.dataset!r} is neither 'synthetic' nor a directory")
    return CorpusSource(config.dataset)


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


@dataclass
class PretrainResult:
    model: MAM2
    checkpoint: Path
    metrics_path: Path
    rows: list
    seconds: float


def _format_row(step: int, lr: float, losses) -> list[str]:
    return [str(step), repr(lr), repr(losses.appearance), repr(losses.motion),
            repr(losses.alignment), repr(losses.total)]


def run_pretrain(config: TrainConfig, resume: bool | str = False, figures: bool = True) -> PretrainResult:
    """Pre-train per ``config`` and write ``metrics.csv`` plus checkpoints under ``out_dir``."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.cfg").write_text(dump_config(config))
    source = make_source(config)
    spe = config.resolved_steps_per_epoch(len(source) or None)
    total_steps = config.total_epochs * spe
    warmup_steps = config.warmup_epochs * spe
    peak = config.peak_lr

    model = MAM2(config.model, seed=config.seed)
    state = AdamWState()
    start = 0
    metrics_path = out_dir / "metrics.csv"
    rows: list[list[str]] = []
    if resume:
        ckpt = latest_checkpoint(out_dir) if resume is True else Path(resume)
        if ckpt is not None:
            model, state, start, _ = load_checkpoint(ckpt)
            if metrics_path.exists():
                with open(metrics_path, newline="") as fh:
                    rows = [r for r in csv.reader(fh)][1:start + 1]
            log.info("resumed from %s at step %d", ckpt, start)

    names = list(model.params)
    t0 = time.perf_counter()
    last_ckpt = latest_checkpoint(out_dir) if start else None
    for step in range(start, total_steps):
        rng = step_rng(config.seed, step)
        clips, _ = source.sample(rng, config.batch_size)
        fwd_seed = int(rng.integers(2**63))
        lr = lr_at(step, peak, warmup_steps, total_steps)
        try:
            out = model.forward_pretrain(clips, fwd_seed)
            nx.zero_grad(model.parameters())
            nx.backward(out.total)
            grads = {n: model.params[n].grad for n in names}
            adamw_step(model.params, grads, state, lr, tuple(config.betas), config.weight_decay,
                       config.eps, decay=default_decay)
        except NumericError:
            log.error("numeric failure at step %d; last good checkpoint: %s", step, last_ckpt)
            _write_metrics(metrics_path, rows)
            raise
        rows.append(_format_row(step, lr, out.losses))
        if config.log_every and step % config.log_every == 0:
            log.info("step %d lr %.3e total %.4f (app %.4f mot %.4f align %.4f)", step, lr,
                     out.losses.total, out.losses.appearance, out.losses.motion, out.losses.alignment)
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            last_ckpt = save_checkpoint(out_dir, model, state, step + 1, config, config.keep_checkpoints)
            _write_metrics(metrics_path, rows)
    final = save_checkpoint(out_dir, model, state, total_steps, config, config.keep_checkpoints)
    _write_metrics(metrics_path, rows)
    seconds = time.perf_counter() - t0
    if figures:
        from ..plotting import plot_loss_curves
        plot_loss_curves(metrics_path, out_dir / "loss_curve.png")
    return PretrainResult(model, final, metrics_path, rows, seconds)


def _write_metrics(path: Path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        writer.writerows(rows)


def read_metrics(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        data = {c: [] for c in METRIC_COLUMNS}
        for row in reader:
            for c in METRIC_COLUMNS:
                data[c].append(float(row[c]))
    return {c: np.array(v) for c, v in data.items()}
