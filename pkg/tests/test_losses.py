import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mam2 import numerics as nx
from mam2.errors import DimensionError, NumericError, UsageError
from mam2.losses import (DEFAULT_ALPHA, LossBundle, alignment_loss, appearance_loss, hybrid_loss,
                         motion_loss)
from mam2.numerics import Tensor

from conftest import fd_error


def test_alignment_examples(f64):
    assert alignment_loss(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0]])).item() == 0.0
    assert alignment_loss(Tensor([[1.0, 0.0]]), Tensor([[0.0, 0.0]])).item() == 1.0
    r = Tensor([[1.0, 0.0], [1.0, math.sqrt(2.0)]])
    assert alignment_loss(r, Tensor(np.zeros((2, 2)))).item() == pytest.approx(2.0, abs=1e-15)


def test_alignment_errors():
    with pytest.raises(UsageError):
        alignment_loss(Tensor(np.zeros((0, 3))), Tensor(np.zeros((0, 3))))
    with pytest.raises(DimensionError):
        alignment_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_uniform_logits_cross_entropy():
    loss = appearance_loss(Tensor(np.zeros((10, 16384))), np.arange(10))
    assert abs(loss.item() - math.log(16384)) < 1e-3
    assert abs(math.log(16384) - 9.7041) < 1e-4


def test_saturated_logits():
    logits = np.zeros((3, 16384))
    logits[np.arange(3), [5, 7, 9]] = 30.0
    assert appearance_loss(Tensor(logits), np.array([5, 7, 9])).item() < 1e-6


def test_two_class_uniform(f64):
    assert appearance_loss(Tensor([[0.0, 0.0]]), np.array([1])).item() == pytest.approx(math.log(2))


def test_appearance_out_of_range():
    with pytest.raises(UsageError):
        appearance_loss(Tensor(np.zeros((2, 4))), np.array([0, 4]))


def test_motion_examples(f64):
    x = np.random.default_rng(0).normal(size=(3, 4, 6))
    assert motion_loss(Tensor(x), x).item() == 0.0
    c, d = 0.3, 6
    assert motion_loss(Tensor(np.zeros((3, 4, d))), np.full((3, 4, d), c)).item() == pytest.approx(c * c * d)
    target = np.zeros((3, 4, d))
    target[1, 2, 0] = 1.0
    assert motion_loss(Tensor(np.zeros((3, 4, d))), target).item() == pytest.approx(1 / 12)


def test_motion_element_reduction(f64):
    out = motion_loss(Tensor(np.zeros((2, 5))), np.ones((2, 5)), reduction="element")
    assert out.item() == pytest.approx(1.0)
    with pytest.raises(UsageError):
        motion_loss(Tensor(np.zeros((2, 5))), np.ones((2, 5)), reduction="sum")


def test_motion_empty():
    with pytest.raises(UsageError):
        motion_loss(Tensor(np.zeros((0, 4))), np.zeros((0, 4)))


def test_hybrid_examples():
    assert hybrid_loss(1.0, 2.0, 3.0, 2.0) == 9.0
    assert hybrid_loss(1.0, 2.0, 1e9, 0.0) == 3.0
    assert DEFAULT_ALPHA == 2.0


def test_hybrid_rejects_nan():
    with pytest.raises(NumericError):
        hybrid_loss(1.0, float("nan"), 0.0)


@settings(max_examples=200)
@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 1e4))
def test_bundle_total_bit_exact(a, m, g):
    b = LossBundle.from_parts(a, m, g, 2.0)
    assert b.total == a + m + 2 * g


def test_tensor_and_float_paths_agree():
    parts = [Tensor(np.float32(v)) for v in (1.25, 0.5, 3.0)]
    t = hybrid_loss(*parts, 2.0)
    assert t.item() == LossBundle.from_parts(1.25, 0.5, 3.0).total


def test_duplicating_tokens_leaves_losses_unchanged(f64):
    rng = np.random.default_rng(1)
    r, rh = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    logits, tgt = rng.normal(size=(5, 7)), rng.integers(0, 7, size=5)
    dup = lambda a: np.concatenate([a, a])
    assert alignment_loss(Tensor(dup(r)), dup(rh)).item() == pytest.approx(alignment_loss(Tensor(r), rh).item())
    assert appearance_loss(Tensor(dup(logits)), dup(tgt)).item() == pytest.approx(
        appearance_loss(Tensor(logits), tgt).item())
    assert motion_loss(Tensor(dup(r)), dup(rh)).item() == pytest.approx(motion_loss(Tensor(r), rh).item())


def test_loss_gradients(f64):
    rng = np.random.default_rng(2)
    r = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    logits = Tensor(rng.normal(size=(6, 9)), requires_grad=True)
    pred = Tensor(rng.normal(size=(2, 3, 5)), requires_grad=True)
    rh, tgt, mt = rng.normal(size=(6, 4)), rng.integers(0, 9, size=6), rng.normal(size=(2, 3, 5))
    fn = lambda: hybrid_loss(appearance_loss(logits, tgt), motion_loss(pred, mt), alignment_loss(r, rh), 2.0)
    err, bad = fd_error(fn, {"r": r, "logits": logits, "pred": pred})
    assert not bad and err < 1e-5
