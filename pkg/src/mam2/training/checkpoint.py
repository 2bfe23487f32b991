"""Checkpoints: one tensor file per named parameter plus a JSON manifest.

::

    ckpt_000500/
        manifest.json        step, config, [{name, shape, dtype}]
        params/<name>.tnsr
        optim/m.<name>.tnsr, optim/v.<name>.tnsr
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path

from ..errors import FormatError
from ..model import MAM2
from ..numerics import Tensor
from ..tensorfile import read_array, write_array
from .config import TrainConfig, build_config
from .optim import AdamWState

MANIFEST = "manifest.json"


def save_checkpoint(out_dir, model: MAM2, state: AdamWState | None, step: int,
                    config: TrainConfig | None = None, keep: int | None = None) -> Path:
    out_dir = Path(out_dir)
    final = out_dir / f"ckpt_{step:06d}"
    tmp = out_dir / f".ckpt_{step:06d}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    (tmp / "params").mkdir(parents=True)
    entries = []
    for name, p in model.named_parameters():
        write_array(tmp / "params" / f"{name}.tnsr", p.data)
        entries.append({"name": name, "shape": list(p.shape), "dtype": str(p.dtype)})
    if state is not None:
        (tmp / "optim").mkdir()
        for name in state.m:
            write_array(tmp / "optim" / f"m.{name}.tnsr", state.m[name])
            write_array(tmp / "optim" / f"v.{name}.tnsr", state.v[name])
    manifest = {"step": step, "optim_step": state.step if state else 0,
                "model": model.config.to_dict(),
                "train": config.to_flat() if config else None, "params": entries}
    (tmp / MANIFEST).write_text(json.dumps(manifest, indent=1))
    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)
    if keep:
        for old in list_checkpoints(out_dir)[:-keep]:
            shutil.rmtree(old)
    return final


def list_checkpoints(out_dir) -> list[Path]:
    return sorted(p for p in Path(out_dir).glob("ckpt_*") if (p / MANIFEST).exists())


def latest_checkpoint(out_dir) -> Path | None:
    found = list_checkpoints(out_dir)
    return found[-1] if found else None


def load_checkpoint(path) -> tuple[MAM2, AdamWState, int, TrainConfig | None]:
    from ..model import ModelConfig

    path = Path(path)
    if (path / MANIFEST).exists() is False:
        latest = latest_checkpoint(path)
        if latest is None:
            raise FormatError("manifest", f"no checkpoint manifest under {path}")
        path = latest
    manifest = json.loads((path / MANIFEST).read_text())
    config = ModelConfig.from_dict(manifest["model"])
    params = {}
    for entry in manifest["params"]:
        arr = read_array(path / "params" / f"{entry['name']}.tnsr")
        if list(arr.shape) != entry["shape"]:
            raise FormatError("extents", f"{entry['name']}: file shape {arr.shape} != manifest {entry['shape']}")
        params[entry["name"]] = Tensor(arr, requires_grad=True, name=entry["name"], dtype=arr.dtype)
    state = AdamWState(step=manifest.get("optim_step", 0))
    optim_dir = path / "optim"
    if optim_dir.is_dir():
        for name in params:
            m_file = optim_dir / f"m.{name}.tnsr"
            if m_file.exists():
                state.m[name] = read_array(m_file)
                state.v[name] = read_array(optim_dir / f"v.{name}.tnsr")
    train = manifest.get("train")
    train_cfg = build_config(train) if train else None
    return MAM2(config, params), state, manifest["step"], train_cfg
