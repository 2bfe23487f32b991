import csv

import numpy as np
import pytest

from mam2.cli import main
from mam2.masking import read_ppm

SMALL = ["--D", "16", "--heads", "2", "--encoder-depth", "1", "--regressor-depth", "1",
         "--appearance-decoder-depth", "1", "--batch-size", "2", "--total-epochs", "2",
         "--warmup-epochs", "1", "--steps-per-epoch", "2", "--probe-train", "8", "--probe-val", "4",
         "--probe-steps", "20"]


def test_dump_mask(tmp_path, capsys):
    out = tmp_path / "m.ppm"
    assert main(["dump-mask", "--kind", "tube", "--ratio", "0.75", "--out", str(out)]) == 0
    assert "147/196" in capsys.readouterr().out
    img = read_ppm(out)
    assert img.ndim == 3 and img.shape[2] == 3


def test_dump_mask_png(tmp_path):
    assert main(["dump-mask", "--kind", "cube", "--ratio", "0.4", "--out", str(tmp_path / "m.ppm"),
                 "--png", str(tmp_path / "m.png")]) == 0
    assert (tmp_path / "m.png").read_bytes()[:4] == b"\x89PNG"


def test_bad_grid_is_a_usage_error(tmp_path, capsys):
    assert main(["dump-mask", "--grid", "14", "--out", str(tmp_path / "m.ppm")]) == 2
    assert "HxW" in capsys.readouterr().err


def test_pretrain_then_probe(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["pretrain", *SMALL, "--out-dir", str(run)]) == 0
    assert (run / "metrics.csv").exists() and (run / "loss_curve.png").exists()
    with open(run / "metrics.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["step", "lr", "L_app", "L_mot", "L_align", "L_total"]
    report = tmp_path / "probe.csv"
    assert main(["probe", "--ckpt", str(run), "--n-train", "8", "--n-val", "4", "--steps", "10",
                 "--out", str(report)]) == 0
    row = next(csv.DictReader(open(report)))
    assert 0.0 <= float(row["val_acc"]) <= 1.0
    assert "gain" in capsys.readouterr().out


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# small run\nrho = 0.5\nseed = 3\n")
    run = tmp_path / "run"
    assert main(["pretrain", "--config", str(cfg), *SMALL, "--seed", "4", "--out-dir", str(run),
                 "--no-figures"]) == 0
    saved = (run / "config.cfg").read_text()
    assert "rho = 0.5" in saved and "seed = 4" in saved


def test_ablate(tmp_path):
    grid = tmp_path / "g.grid"
    grid.write_text("rho = 0.5, 0.75\n")
    out = tmp_path / "abl"
    assert main(["ablate", "--grid", str(grid), *SMALL, "--ablation-dir", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "ablation.csv")))
    assert [r["rho"] for r in rows] == ["0.5", "0.75"]
    assert (out / "ablation.png").exists()


def test_gradcheck_single_target(capsys):
    assert main(["gradcheck", "--motion-target", "none", "--max-entries", "2"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_make_corpus(tmp_path):
    assert main(["make-corpus", "--out", str(tmp_path / "c"), "--n-train", "4", "--n-val", "4",
                 "--size", "16", "--frames", "4"]) == 0
    assert (tmp_path / "c" / "labels.csv").exists()
