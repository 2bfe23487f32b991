import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mam2.errors import DimensionError, StructureError, UsageError
from mam2.masking import (MaskSpec, cube_mask, make_mask, masked_count, partition, read_ppm,
                          render_mask, tube_mask, write_ppm)
from mam2.numerics import Tensor


def test_vit_b_tube():
    m = tube_mask(196, 16, 0.75, 0)
    assert m.num_masked_per_frame == 147
    assert len(m.visible_spatial) == 49
    assert all(np.array_equal(f, m.frames[0]) for f in m.frames)


def test_rho_zero_and_one():
    assert tube_mask(196, 4, 0.0, 0).M == []
    full = tube_mask(16, 5, 1.0, 0)
    assert len(full.M) == 80 and len(full.M_prime) == 4 * 16


@settings(max_examples=50, deadline=None)
@given(N=st.integers(1, 300), T=st.integers(1, 8), rho=st.floats(0, 1), seed=st.integers(0, 2**32 - 1))
def test_tube_invariants(N, T, rho, seed):
    m = tube_mask(N, T, rho, seed)
    k = masked_count(rho, N)
    assert k == int(np.floor(rho * N + 0.5))
    assert len(m.M) == T * k and len(m.M_prime) == (T - 1) * k
    assert set(m.M_prime) <= set(m.M)
    assert np.all(np.diff(m.masked_spatial) > 0)
    assert m == m and tube_mask(N, T, rho, seed).masked_spatial.tolist() == m.masked_spatial.tolist()


def test_ratio_out_of_range():
    with pytest.raises(UsageError):
        tube_mask(10, 2, 1.5, 0)


def test_cube_whole_grid():
    m = cube_mask(4, 4, 3, 1.0, 4, 0)
    assert m.num_masked_per_frame == 16


@pytest.mark.parametrize("seed", range(50))
def test_cube_count_bounds(seed):
    m = cube_mask(14, 14, 4, 0.4, 4, seed)
    n = m.num_masked_per_frame
    assert 0.4 * 196 <= n <= 0.4 * 196 + 16
    assert m.temporally_constant


def test_cube_block_too_large():
    with pytest.raises(UsageError):
        cube_mask(4, 4, 2, 0.5, 5, 0)


def test_make_mask_dispatch():
    assert make_mask("tube", 16, 2, 0.5, 0).kind == "tube"
    assert make_mask("cube", 16, 2, 0.5, 0, grid=(4, 4), block_size=2).kind == "cube"
    with pytest.raises(UsageError):
        make_mask("frame", 16, 2, 0.5, 0)


def test_varying_mask_is_not_a_tube():
    m = MaskSpec("cube", 0.5, 4, 2, (np.array([0, 1]), np.array([2, 3])), (2, 2))
    with pytest.raises(StructureError):
        m.masked_spatial


def test_partition_rho_zero():
    x = Tensor(np.random.default_rng(0).random((3, 4, 5)))
    vis, masked = partition(x, tube_mask(4, 3, 0.0, 0))
    np.testing.assert_array_equal(vis.data, x.data)
    assert masked == []


def test_partition_vit_b_shape():
    vis, masked = partition(Tensor(np.zeros((16, 196, 8))), tube_mask(196, 16, 0.75, 1))
    assert vis.shape == (16, 49, 8) and len(masked) == 16 * 147


def test_partition_reassembles():
    rng = np.random.default_rng(2)
    x = rng.random((3, 9, 4), dtype=np.float32)
    m = tube_mask(9, 3, 0.5, 3)
    vis, masked = partition(Tensor(x), m)
    out = np.zeros_like(x)
    out[:, m.visible_spatial] = vis.data
    for t, j in masked:
        out[t, j] = x[t, j]
    np.testing.assert_array_equal(out, x)


def test_partition_mismatch():
    with pytest.raises(DimensionError):
        partition(Tensor(np.zeros((2, 5, 3))), tube_mask(4, 2, 0.5, 0))


def test_render_marks_masked_cells_red(tmp_path):
    m = tube_mask(16, 2, 0.5, 4)
    img = render_mask(m, cell=4)
    assert img.shape == (17, 2 * 17 + 4, 3)
    for j in range(16):
        r, c = divmod(j, 4)
        pixel = tuple(img[r * 4 + 2, c * 4 + 2])
        assert (pixel == (220, 40, 40)) == (j in set(m.masked_spatial.tolist()))
    write_ppm(tmp_path / "m.ppm", img)
    assert (tmp_path / "m.ppm").read_bytes().startswith(b"P6\n")
    np.testing.assert_array_equal(read_ppm(tmp_path / "m.ppm"), img)
