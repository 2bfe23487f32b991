"""Optimisation, pre-training, probing and ablation."""

from .config import TrainConfig, build_config, load_config, toy_config
from .optim import AdamWState, adamw_step, lr_at, scaled_lr
from .pretrain import PretrainResult, run_pretrain
from .probe import ProbeReport, linear_probe

__all__ = ["TrainConfig", "build_config", "load_config", "toy_config", "AdamWState", "adamw_step",
           "lr_at", "scaled_lr", "PretrainResult", "run_pretrain", "ProbeReport", "linear_probe"]
