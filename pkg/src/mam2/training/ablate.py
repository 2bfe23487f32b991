"""Ablation harness: pre-train and probe every cell of a configuration grid.

A grid file uses the config syntax with comma-separated alternatives::

    # decoder depths x mask ratio
    appearance_decoder_depth = 2, 4
    motion_decoder_depth = 1, 2
    rho = 0.5, 0.75

Keys with a single value apply to every cell. ``betas`` is the one field
whose value is itself a list and is never expanded. Fields joined by ``+``
vary together, one space-separated tuple per alternative::

    appearance_decoder_depth + motion_decoder_depth = 4 4, 4 2, 2 2
"""

from __future__ import annotations

import csv
import itertools
import logging
from pathlib import Path

from ..errors import UsageError
from .config import TrainConfig, build_config, parse_config_text
from .pretrain import read_metrics, run_pretrain
from .probe import linear_probe, load_probe_data

log = logging.getLogger(__name__)

_NOT_EXPANDED = {"betas"}


def parse_grid(text: str) -> tuple[dict, dict[str, list[str]]]:
    """Split a grid file into fixed settings and the axes to sweep."""
    fixed, axes = {}, {}
    for key, value in parse_config_text(text).items():
        parts = axis_split(value)
        if key in _NOT_EXPANDED or (len(parts) == 1 and "+" not in key):
            fixed[key] = value
        else:
            axes[key] = parts
    return fixed, axes


def _axis_values(key: str, value: str) -> list[dict[str, str]]:
    names = [k.strip() for k in key.split("+")]
    out = []
    for alt in axis_split(value):
        parts = alt.split() if len(names) > 1 else [alt]
        if len(parts) != len(names):
            raise UsageError(f"grid axis {key!r}: alternative {alt!r} needs {len(names)} values")
        out.append(dict(zip(names, parts)))
    return out


def axis_split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",")]


def grid_cells(axes: dict[str, list[str]]) -> list[dict[str, str]]:
    """Cartesian product over axes; each cell maps config fields to raw values."""
    per_axis = [_axis_values(k, ", ".join(v)) for k, v in axes.items()]
    cells = []
    for combo in itertools.product(*per_axis):
        cell = {}
        for part in combo:
            cell.update(part)
        cells.append(cell)
    return cells


def _cell_name(cell: dict) -> str:
    if not cell:
        return "base"
    return "_".join(f"{k}-{v}" for k, v in cell.items()).replace("/", "-")


def run_ablation(grid_path, base: TrainConfig, out_dir, data="synthetic", figures: bool = True) -> Path:
    """Run every grid cell and write ``ablation.csv`` (plus a bar chart) to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fixed, axes = parse_grid(Path(grid_path).read_text())
    base = build_config(fixed, base)
    rows = []
    cells = grid_cells(axes)
    for cell in cells:
        name = _cell_name(cell)
        cfg = build_config({**cell, "out_dir": str(out_dir / name)}, base)
        log.info("ablation cell %s", name)
        result = run_pretrain(cfg, figures=figures)
        train, val = load_probe_data(data, cfg.model, cfg.probe_train, cfg.probe_val, cfg.stride, cfg.probe_seed)
        report = linear_probe(result.model, train, val, steps=cfg.probe_steps, lr=cfg.probe_lr, seed=cfg.seed)
        m = read_metrics(result.metrics_path)
        rows.append({**cell, "final_loss": float(m["L_total"][-10:].mean()), **report.as_dict()})
    path = out_dir / "ablation.csv"
    fields = [f for cell in cells[:1] for f in cell]
    columns = fields + ["final_loss", "train_acc", "val_acc", "baseline_train_acc",
                            "baseline_val_acc", "gain", "n_train", "n_val"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    if figures and rows:
        from ..plotting import plot_ablation
        plot_ablation(rows, out_dir / "ablation.png", fields)
    return path
