import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mam2 import numerics as nx
from mam2.errors import DimensionError, UsageError
from mam2.numerics import Tensor
from mam2.patch_embed import PosEmbeds, add_pos, embed, patchify, position_table, unpatchify

from conftest import fd_error


def test_vit_b_patch_shape():
    assert patchify(np.zeros((16, 3, 224, 224), dtype=np.float32), 16).shape == (16, 196, 768)


def test_small_patch_shape():
    assert patchify(np.zeros((1, 3, 4, 4)), 2).shape == (1, 4, 12)


def test_raster_order_and_channel_major():
    x = np.arange(1 * 3 * 4 * 4, dtype=np.float64).reshape(1, 3, 4, 4)
    p = patchify(x, 2)
    # patch 1 is the top-right 2x2 block; the first four entries are its channel-0 pixels
    assert p[0, 1, :4].tolist() == [2.0, 3.0, 6.0, 7.0]
    assert p[0, 1, 4:8].tolist() == [18.0, 19.0, 22.0, 23.0]


@settings(max_examples=25, deadline=None)
@given(T=st.integers(1, 3), gh=st.integers(1, 3), gw=st.integers(1, 3), P=st.sampled_from([1, 2, 4]),
       seed=st.integers(0, 1000))
def test_unpatchify_roundtrip_and_energy(T, gh, gw, P, seed):
    x = np.random.default_rng(seed).random((T, 3, gh * P, gw * P))
    p = patchify(x, P)
    assert unpatchify(p, P, gh * P, gw * P).tobytes() == x.tobytes()
    assert np.isclose((p ** 2).sum(), (x ** 2).sum(), rtol=1e-12)


def test_indivisible():
    with pytest.raises(UsageError):
        patchify(np.zeros((1, 3, 10, 8)), 4)


def test_identity_embedding():
    x = np.random.default_rng(0).random((2, 4, 12))
    grid = embed(Tensor(x), Tensor(np.eye(12)), Tensor(np.zeros(12)), 2)
    np.testing.assert_allclose(grid.tokens.data, x, atol=1e-6)


def test_zero_patches_give_bias():
    bias = Tensor(np.arange(5.0))
    grid = embed(Tensor(np.zeros((2, 3, 12))), Tensor(np.ones((12, 5))), bias, 2)
    np.testing.assert_array_equal(grid.tokens.data, np.broadcast_to(bias.data, (2, 3, 5)))


def test_embed_shape_mismatch():
    with pytest.raises(DimensionError):
        embed(Tensor(np.zeros((2, 3, 12))), Tensor(np.ones((10, 5))), Tensor(np.zeros(5)))


def test_embed_gradient(f64):
    rng = np.random.default_rng(1)
    patches = Tensor(rng.uniform(-1, 1, size=(2, 3, 12)))
    w = Tensor(rng.uniform(-1, 1, size=(12, 5)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, size=5), requires_grad=True)
    err, bad = fd_error(lambda: nx.sum(embed(patches, w, b, 2).tokens), {"w": w, "b": b})
    assert not bad and err < 1e-5


def _pe(rng, T, N, D):
    return PosEmbeds(Tensor(rng.normal(size=(T, D))), Tensor(rng.normal(size=(N, D))))


def test_zero_embeddings_identity():
    x = Tensor(np.random.default_rng(2).random((3, 4, 5)))
    out = add_pos(x, PosEmbeds(Tensor(np.zeros((3, 5))), Tensor(np.zeros((4, 5)))))
    np.testing.assert_array_equal(out.data, x.data)


def test_separable_differences(f64):
    rng = np.random.default_rng(3)
    pe = _pe(rng, 3, 4, 5)
    out = add_pos(Tensor(np.zeros((3, 4, 5))), pe).data
    et, es = pe.temporal.data, pe.spatial.data
    for i in range(3):
        for j in range(4):
            for k in range(4):
                np.testing.assert_allclose(out[i, j] - out[i, k], es[j] - es[k], atol=1e-12)
            for m in range(3):
                np.testing.assert_allclose(out[i, j] - out[m, j], et[i] - et[m], atol=1e-12)


def test_add_pos_mismatch():
    with pytest.raises(DimensionError):
        add_pos(Tensor(np.zeros((3, 4, 5))), _pe(np.random.default_rng(0), 3, 5, 5))


def test_position_table_matches_add_pos(f64):
    rng = np.random.default_rng(4)
    pe = _pe(rng, 3, 4, 5)
    full = add_pos(Tensor(np.zeros((3, 4, 5))), pe).data
    t = np.array([[0, 2], [1, 1]])
    s = np.array([[3, 0], [2, 2]])
    table = position_table(pe, t, s).data
    np.testing.assert_allclose(table, full[t, s], atol=1e-12)


def test_pos_init_std():
    pe = PosEmbeds.init(16, 196, 768, np.random.default_rng(0))
    assert abs(pe.spatial.data.std() - 0.02) < 1e-3
    assert pe.temporal.requires_grad
