import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mam2.errors import NumericError, UsageError
from mam2.model import MAM2, ModelConfig
from mam2.numerics import Tensor
from mam2.training import (AdamWState, adamw_step, linear_probe, lr_at, run_pretrain, scaled_lr,
                           toy_config)
from mam2.training.ablate import grid_cells, parse_grid
from mam2.training.checkpoint import list_checkpoints, load_checkpoint, save_checkpoint
from mam2.training.config import build_config, dump_config, load_config
from mam2.training.optim import default_decay
from mam2.training.probe import fit_linear, leakage_probe, synthetic_probe_set


def _p(value):
    return {"w": Tensor(np.array(value, dtype=np.float64), requires_grad=True)}


def test_adamw_zero_grads_no_decay():
    p = _p([1.0, -2.0])
    adamw_step(p, {"w": np.zeros(2)}, AdamWState(), 0.1, weight_decay=0.0)
    assert p["w"].data.tolist() == [1.0, -2.0]


def test_adamw_first_step_is_lr():
    p = _p([0.5])
    adamw_step(p, {"w": np.ones(1)}, AdamWState(), 0.1, weight_decay=0.0)
    assert p["w"].data[0] == pytest.approx(0.5 - 0.1, abs=1e-8)


def test_adamw_decay_only():
    p = _p([2.0])
    adamw_step(p, {"w": np.zeros(1)}, AdamWState(), 0.1, weight_decay=0.05)
    assert p["w"].data[0] == pytest.approx(2.0 - 0.1 * 0.05 * 2.0)


def test_adamw_nan_leaves_params():
    p = _p([1.0])
    with pytest.raises(NumericError):
        adamw_step(p, {"w": np.array([np.nan])}, AdamWState(), 0.1)
    assert p["w"].data[0] == 1.0


def test_adamw_deterministic():
    rng = np.random.default_rng(0)
    grads = [rng.normal(size=3) for _ in range(5)]
    runs = []
    for _ in range(2):
        p, s = _p([0.1, 0.2, 0.3]), AdamWState()
        for g in grads:
            adamw_step(p, {"w": g}, s, 1e-2)
        runs.append(p["w"].data.tobytes())
    assert runs[0] == runs[1]


def test_decay_groups():
    assert default_decay("encoder.0.attn_s.wq")
    assert not default_decay("encoder.0.attn_s.bq")
    assert not default_decay("encoder_norm.gamma")
    assert not default_decay("pos.spatial")
    assert not default_decay("mask_query")


def test_lr_knots():
    assert lr_at(0, 1.0, 10, 110) == 0.0
    assert lr_at(10, 1.0, 10, 110) == 1.0
    assert lr_at(60, 1.0, 10, 110) == pytest.approx(0.5)
    assert lr_at(110, 1.0, 10, 110) == 0.0


@settings(max_examples=100)
@given(warm=st.integers(0, 50), extra=st.integers(1, 200))
def test_lr_monotone_after_warmup(warm, extra):
    total = warm + extra
    values = [lr_at(s, 3.0, warm, total) for s in range(warm, total + 1)]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    if warm:
        assert math.isclose(lr_at(warm - 1, 3.0, warm, total) + 3.0 / warm, values[0])


def test_scaled_lr():
    assert scaled_lr(1.5e-4, 256) == 1.5e-4
    assert scaled_lr(1.5e-4, 512) == 3e-4


def test_config_round_trip(tmp_path):
    cfg = toy_config(rho=0.5, motion_target="clip-order", betas=(0.9, 0.99))
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    back = load_config(path)
    assert back == cfg


def test_config_validation():
    with pytest.raises(UsageError):
        build_config({"warmup_epochs": 5, "total_epochs": 5})
    with pytest.raises(UsageError):
        build_config({"no_such_field": 1})


def _tiny_run(tmp_path, name, **kw):
    cfg = toy_config(out_dir=str(tmp_path / name), total_epochs=2, warmup_epochs=1, steps_per_epoch=5,
                     batch_size=2, checkpoint_every=4, D=16, encoder_depth=1, regressor_depth=1,
                     appearance_decoder_depth=1, heads=2, **kw)
    return cfg, run_pretrain(cfg, figures=False)


def test_ten_steps_are_bit_identical(tmp_path):
    _, a = _tiny_run(tmp_path, "a")
    _, b = _tiny_run(tmp_path, "b")
    assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()
    assert len(a.rows) == 10


def test_resume_matches_uninterrupted(tmp_path):
    cfg, full = _tiny_run(tmp_path, "full")
    short = build_config({"total_epochs": 2, "steps_per_epoch": 5}, base=cfg)
    short.out_dir = str(tmp_path / "resumed")
    # interrupt by keeping only the step-4 checkpoint of an identical run
    run_pretrain(short, figures=False)
    for ck in list_checkpoints(short.out_dir)[1:]:
        import shutil
        shutil.rmtree(ck)
    assert list_checkpoints(short.out_dir)[-1].name == "ckpt_000008"
    resumed = run_pretrain(short, resume=True, figures=False)
    assert resumed.metrics_path.read_bytes() == full.metrics_path.read_bytes()


def test_checkpoint_round_trip(tmp_path):
    model = MAM2(ModelConfig.tiny(), seed=3)
    state = AdamWState()
    adamw_step(model.params, {k: np.ones_like(v.data) for k, v in model.params.items()}, state, 1e-3)
    path = save_checkpoint(tmp_path, model, state, 7)
    back, st2, step, _ = load_checkpoint(path)
    assert step == 7 and st2.step == 1
    for k, v in model.params.items():
        assert back.params[k].data.tobytes() == v.data.tobytes()
        assert st2.m[k].tobytes() == state.m[k].tobytes()


def test_checkpoint_keeps_last_two(tmp_path):
    model = MAM2(ModelConfig.tiny(), seed=0)
    for step in (1, 2, 3):
        save_checkpoint(tmp_path, model, None, step, keep=2)
    assert [p.name for p in list_checkpoints(tmp_path)] == ["ckpt_000002", "ckpt_000003"]


def test_grid_cells():
    fixed, axes = parse_grid("seed = 1\nrho = 0.5, 0.75\n"
                             "appearance_decoder_depth + motion_decoder_depth = 4 4, 2 2\n"
                             "betas = 0.9, 0.95\n")
    assert fixed == {"seed": "1", "betas": "0.9, 0.95"}
    cells = grid_cells(axes)
    assert len(cells) == 4
    assert {"rho": "0.75", "appearance_decoder_depth": "2", "motion_decoder_depth": "2"} in cells


def test_grid_arity_error():
    _, axes = parse_grid("a + b = 1 2, 3\n")
    with pytest.raises(UsageError):
        grid_cells(axes)


def test_fit_linear_separable():
    rng = np.random.default_rng(0)
    y = np.arange(200) % 4
    x = rng.normal(size=(200, 6))
    x[np.arange(200), y] += 5.0
    predict = fit_linear(x, y, 4, steps=200)
    assert np.mean(predict(x) == y) > 0.98


def test_random_init_probe_runs_and_is_bounded():
    cfg = ModelConfig.toy(D=16, heads=2, encoder_depth=1)
    train = synthetic_probe_set(16, cfg.T, cfg.H, 4, 0)
    val = synthetic_probe_set(8, cfg.T, cfg.H, 4, 1)
    rep = linear_probe(MAM2(cfg, seed=0), train, val, steps=50)
    for acc in (rep.train_acc, rep.val_acc, rep.baseline_train_acc, rep.baseline_val_acc):
        assert 0.0 <= acc <= 1.0
    # same init as the baseline: identical numbers
    assert rep.gain == 0.0


def test_leakage_probe_position_reveals_order():
    rep = leakage_probe(MAM2(ModelConfig.toy(motion_target="clip-order"), seed=0))
    assert rep.with_position > 0.95
    assert rep.without_position <= 0.6
