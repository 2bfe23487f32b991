"""Training configuration and its flat ``key = value`` text format.

Model fields and training fields share one namespace, so a config file
or the command line can set ``D``, ``rho`` or ``base_lr`` alike::

    # toy.cfg
    D = 64
    encoder_depth = 4
    base_lr = 0.096
    betas = 0.9, 0.95
"""

from __future__ import annotations

import argparse
import math
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..errors import UsageError
from ..model import ModelConfig
from .optim import scaled_lr


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    base_lr: float = 1.5e-4
    batch_size: int = 32
    total_epochs: int = 800
    warmup_epochs: int = 30
    steps_per_epoch: int = 0  # 0: derived from the corpus size
    betas: tuple = (0.9, 0.95)
    weight_decay: float = 0.05
    eps: float = 1e-8
    seed: int = 0
    dataset: str = "synthetic"  # or a corpus directory
    stride: int = 4
    out_dir: str = "runs/pretrain"
    checkpoint_every: int = 100
    keep_checkpoints: int = 2
    log_every: int = 50
    probe_train: int = 256
    probe_val: int = 128
    probe_steps: int = 500
    probe_lr: float = 1e-2
    probe_seed: int = 1234

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise UsageError("need 0 <= warmup_epochs < total_epochs")
        if len(self.betas) != 2:
            raise UsageError("betas needs two values")
        self.model.validate()

    @property
    def peak_lr(self) -> float:
        return scaled_lr(self.base_lr, self.batch_size)

    def resolved_steps_per_epoch(self, corpus_size: int | None = None) -> int:
        if self.steps_per_epoch:
            return self.steps_per_epoch
        if corpus_size is None:
            raise UsageError("steps_per_epoch must be set for synthetic data")
        return max(1, corpus_size // self.batch_size)

    def to_flat(self) -> dict:
        flat = {f.name: getattr(self.model, f.name) for f in fields(ModelConfig)}
        flat.update({f.name: getattr(self, f.name) for f in fields(TrainConfig) if f.name != "model"})
        return flat


def toy_config(**overrides) -> TrainConfig:
    """The desk-scale run: T=8, 32x32, P=8, D=64, depths 4/2/2/1, batch 8, 500 steps.

    ``base_lr`` 9.6e-2 scales to a peak of 3e-3 at batch 8.
    """
    base = dict(batch_size=8, total_epochs=10, warmup_epochs=1, steps_per_epoch=50,
                base_lr=9.6e-2, stride=4, checkpoint_every=100, log_every=50)
    return build_config({**ModelConfig.toy().to_dict(), **base, **overrides})


_MODEL_FIELDS = {f.name: f for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig) if f.name != "model"}
_MODEL_HINTS = typing.get_type_hints(ModelConfig)
_TRAIN_HINTS = typing.get_type_hints(TrainConfig)


def _coerce(name: str, raw, hint):
    if not isinstance(raw, str):
        return tuple(raw) if hint is tuple else raw
    text = raw.strip()
    try:
        if hint is bool:
            return text.lower() in ("1", "true", "yes", "on")
        if hint is int:
            return int(float(text)) if "e" in text.lower() else int(text)
        if hint is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError
            return value
        if hint is tuple:
            return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise UsageError(f"bad value for {name}: {raw!r}") from exc
    return text


def build_config(flat: dict, base: TrainConfig | None = None) -> TrainConfig:
    """Build a :class:`TrainConfig` from flat key/values, on top of ``base`` if given."""
    base = base or TrainConfig()
    model_kw, train_kw = {}, {}
    for key, raw in flat.items():
        key = key.replace("-", "_")
        if key in _MODEL_FIELDS:
            model_kw[key] = _coerce(key, raw, _MODEL_HINTS[key])
        elif key in _TRAIN_FIELDS:
            train_kw[key] = _coerce(key, raw, _TRAIN_HINTS[key])
        else:
            raise UsageError(f"unknown config key {key!r}")
    model = replace(base.model, **model_kw)
    return replace(base, model=model, **train_kw)


def parse_config_text(text: str) -> dict:
    flat = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        flat[key.strip()] = value.strip()
    return flat


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return build_config(parse_config_text(Path(path).read_text()), base)


def dump_config(config: TrainConfig) -> str:
    lines = []
    for key, value in config.to_flat().items():
        if isinstance(value, tuple):
            value = ", ".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def add_override_flags(parser: argparse.ArgumentParser) -> None:
    """One ``--field-name`` string flag per config field; parsed later by :func:`build_config`."""
    group = parser.add_argument_group("config overrides")
    for name in list(_MODEL_FIELDS) + list(_TRAIN_FIELDS):
        group.add_argument("--" + name.replace("_", "-"), dest="cfg_" + name, default=None,
                           metavar="VALUE")


def overrides_from_args(args: argparse.Namespace) -> dict:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
