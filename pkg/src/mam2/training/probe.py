"""Linear probing of frozen encoder features."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import numerics as nx
from ..data import NUM_CLASSES, clip_seed, load_split, synthetic_clip
from ..errors import UsageError
from ..masking import batch_indices
from ..model import MAM2
from ..numerics import Tensor
from ..targets import half_swap_order
from .optim import AdamWState, adamw_step


@dataclass
class ProbeReport:
    train_acc: float
    val_acc: float
    baseline_train_acc: float
    baseline_val_acc: float
    n_train: int
    n_val: int

    @property
    def gain(self) -> float:
        return self.val_acc - self.baseline_val_acc

    def as_dict(self) -> dict:
        return {**asdict(self), "gain": self.gain}


def pooled_features(model: MAM2, clips: np.ndarray, batch: int = 32) -> np.ndarray:
    """Mean over all ``T x N`` positions of the encoder output on unmasked clips."""
    feats = []
    with nx.no_grad():
        for i in range(0, len(clips), batch):
            lat = model.encode_full(clips[i:i + batch]).data
            feats.append(lat.reshape(lat.shape[0], -1, lat.shape[-1]).mean(axis=1))
    return np.concatenate(feats).astype(np.float64)


def fit_linear(x_train: np.ndarray, y_train: np.ndarray, num_classes: int, steps: int = 500,
               lr: float = 1e-2, weight_decay: float = 1e-4, seed: int = 0):
    """Softmax regression on standardised features, trained full-batch with AdamW."""
    mu = x_train.mean(axis=0)
    sd = x_train.std(axis=0) + 1e-6
    rng = np.random.default_rng(seed)
    D = x_train.shape[1]
    with nx.precision("float64"):
        W = Tensor(rng.normal(0.0, 0.01, size=(D, num_classes)), requires_grad=True)
        b = Tensor(np.zeros(num_classes), requires_grad=True)
        params = {"weight": W, "bias": b}
        state = AdamWState()
        xs = Tensor((x_train - mu) / sd)
        for _ in range(steps):
            nx.zero_grad(params.values())
            loss = nx.cross_entropy(nx.add(nx.matmul(xs, W), b), y_train)
            nx.backward(loss)
            adamw_step(params, {k: v.grad for k, v in params.items()}, state, lr,
                       weight_decay=weight_decay, decay=lambda n: n == "weight")

    def predict(x: np.ndarray) -> np.ndarray:
        return np.argmax(((x - mu) / sd) @ W.data + b.data, axis=1)

    return predict


def probe_features(f_train, y_train, f_val, y_val, steps: int, lr: float, seed: int,
                   weight_decay: float = 1e-4) -> tuple[float, float]:
    predict = fit_linear(f_train, y_train, NUM_CLASSES, steps=steps, lr=lr, weight_decay=weight_decay, seed=seed)
    return float(np.mean(predict(f_train) == y_train)), float(np.mean(predict(f_val) == y_val))


def synthetic_probe_set(n: int, T: int, size: int, stride: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    labels = np.arange(n) % NUM_CLASSES
    clips = np.stack([synthetic_clip(clip_seed(seed, i), int(labels[i]), T, size, stride).frames
                      for i in range(n)])
    return clips, labels


def load_probe_data(data, config, n_train: int, n_val: int, stride: int, seed: int):
    """``data`` is a corpus directory or ``"synthetic"``."""
    if data == "synthetic":
        m = config
        train = synthetic_probe_set(n_train, m.T, m.H, stride, seed)
        val = synthetic_probe_set(n_val, m.T, m.H, stride, seed + 1)
        return train, val
    return load_split(data, "train"), load_split(data, "val")


def linear_probe(model: MAM2, train: tuple, val: tuple, baseline: MAM2 | None = None,
                 steps: int = 500, lr: float = 1e-2, seed: int = 0) -> ProbeReport:
    """Probe ``model`` and a random-init ``baseline`` on the same labelled clips."""
    (x_tr, y_tr), (x_va, y_va) = train, val
    for y in (y_tr, y_va):
        if y.size and (y.min() < 0 or y.max() >= NUM_CLASSES):
            raise UsageError(f"labels must lie in [0, {NUM_CLASSES})")
    f_tr, f_va = pooled_features(model, x_tr), pooled_features(model, x_va)
    tr, va = probe_features(f_tr, y_tr, f_va, y_va, steps, lr, seed)
    if baseline is None:
        baseline = MAM2(model.config, seed=seed)
    b_tr, b_va = probe_features(pooled_features(baseline, x_tr), y_tr,
                                pooled_features(baseline, x_va), y_va, steps, lr, seed)
    return ProbeReport(tr, va, b_tr, b_va, len(y_tr), len(y_va))


@dataclass
class LeakageReport:
    with_position: float
    without_position: float
    steps: int
    n_train: int
    n_val: int


def _shuffled_query_features(model: MAM2, n_clips: int, seed: int, with_position: bool):
    """Flattened shuffled query sequences, one row per masked tube, with their order labels."""
    cfg = model.config
    masks, labels = model.sample_masks(n_clips, seed)
    mask_idx = batch_indices(masks, "masked")
    with nx.no_grad():
        if with_position:
            q = model.mask_queries(mask_idx).data
        else:
            q = np.broadcast_to(model.params["mask_query"].data,
                                mask_idx.shape + (cfg.D_reg,))
    B, T, n = mask_idx.shape
    rows = []
    for b in range(B):
        for j in range(n):
            order = half_swap_order(T, int(labels[b, j]))
            rows.append(q[b, order, j].reshape(-1))
    return np.asarray(rows, dtype=np.float64), labels.reshape(-1)


def leakage_probe(model: MAM2, n_train: int = 64, n_val: int = 32, steps: int = 200,
                  lr: float = 1e-2, seed: int = 0) -> LeakageReport:
    """How well a linear readout recovers the clip order from shuffled mask queries alone.

    Queries carry ``e^t`` of their source frame, so after shuffling the two
    halves the temporal embedding in each slot reveals the permutation.
    Without positions every query is the same vector and accuracy is chance.
    """
    acc = []
    for with_pos in (True, False):
        x_tr, y_tr = _shuffled_query_features(model, n_train, seed, with_pos)
        x_va, y_va = _shuffled_query_features(model, n_val, seed + 1, with_pos)
        predict = fit_linear(x_tr, y_tr, 2, steps=steps, lr=lr, seed=seed)
        acc.append(float(np.mean(predict(x_va) == y_va)))
    return LeakageReport(acc[0], acc[1], steps, len(y_tr), len(y_va))
