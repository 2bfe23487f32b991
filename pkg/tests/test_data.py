import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mam2.data import (generate_moving_shapes, load_split, make_corpus, read_labels, sample_clip,
                       synthetic_clip)
from mam2.errors import FormatError, RangeError, UsageError
from mam2.numerics import Tensor
from mam2.tensorfile import decode, encode, read_array, read_tensor, write_array, write_tensor


def test_static_class_is_constant():
    clip = generate_moving_shapes(7, 3, 6, 24, 24)
    for t in range(clip.T):
        np.testing.assert_array_equal(clip.frames[t], clip.frames[0])


def test_right_drift_shifts_shape_by_t():
    # find a seed whose rectangle stays clear of the border over the clip
    T, H, W = 5, 32, 32
    for seed in range(200):
        clip = generate_moving_shapes(seed, 0, T, H, W)
        y, x, h, w = clip.box
        if y + h <= H and x + w + T <= W:
            break
    else:
        pytest.fail("no interior rectangle among 200 seeds")
    support = (slice(None), slice(y, y + h), slice(x, x + w))
    for t in range(T):
        shifted = (slice(None), slice(y, y + h), slice(x + t, x + w + t))
        np.testing.assert_array_equal(clip.frames[t][shifted], clip.frames[0][support])


@pytest.mark.parametrize("cls,shift", [(0, (0, 1)), (1, (0, -1)), (2, (1, 0))])
def test_drift_direction(cls, shift):
    clip = generate_moving_shapes(11, cls, 3, 32, 32)
    color = np.array(clip.color, dtype=np.float32)[:, None, None]
    covered = np.all(clip.frames == color, axis=1)  # T x H x W, rectangle wraps at borders
    np.testing.assert_array_equal(covered[1], np.roll(covered[0], shift, axis=(0, 1)))


def test_generation_deterministic():
    a = generate_moving_shapes(5, 1, 4, 16, 16).frames
    b = generate_moving_shapes(5, 1, 4, 16, 16).frames
    assert a.tobytes() == b.tobytes()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), cls=st.integers(0, 3))
def test_generation_in_unit_range(seed, cls):
    f = generate_moving_shapes(seed, cls, 3, 16, 20).frames
    assert f.min() >= 0.0 and f.max() <= 1.0


def test_invalid_class():
    with pytest.raises(UsageError):
        generate_moving_shapes(0, 4, 4, 16, 16)


def test_too_small_frames():
    with pytest.raises(UsageError):
        generate_moving_shapes(0, 0, 4, 8, 16)


def test_sample_clip_stride_one():
    frames = np.arange(10, dtype=np.float32)[:, None, None, None] * np.ones((1, 1, 2, 2))
    assert sample_clip(frames, 0, 1, 4).indices == (0, 1, 2, 3)


def test_sample_clip_stride_four_start_two():
    frames = np.zeros((11, 1, 2, 2))
    clip = sample_clip(frames, 2, 4, 3)
    assert clip.indices == (2, 6, 10) and clip.source_stride == 4


def test_sample_clip_requires_61_frames():
    with pytest.raises(RangeError, match="61"):
        sample_clip(np.zeros((60, 1, 2, 2)), 0, 4, 16)
    assert sample_clip(np.zeros((61, 1, 2, 2)), 0, 4, 16).T == 16


def test_synthetic_clip_stride_matches_source():
    clip = synthetic_clip(3, 0, 4, 16, 4)
    src = generate_moving_shapes(3, 0, 13, 16, 16)
    np.testing.assert_array_equal(clip.frames, src.frames[[0, 4, 8, 12]])


# tensor file

def test_roundtrip_full_clip(tmp_path):
    x = np.random.default_rng(0).random((16, 3, 224, 224), dtype=np.float32)
    write_array(tmp_path / "clip.tnsr", x)
    y = read_array(tmp_path / "clip.tnsr")
    assert y.shape == x.shape and y.dtype == x.dtype and y.tobytes() == x.tobytes()


def test_roundtrip_scalar(tmp_path):
    write_tensor(tmp_path / "s.tnsr", Tensor(np.float32(2.5)))
    t = read_tensor(tmp_path / "s.tnsr")
    assert t.shape == () and t.item() == 2.5


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(dtype=st.sampled_from([np.float32, np.float64, np.int32, np.int64, np.uint8]),
                  shape=hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5)))
def test_roundtrip_property(x):
    y = decode(encode(x))
    assert y.shape == x.shape and y.dtype == x.dtype and y.tobytes() == x.tobytes()


def test_header_is_little_endian():
    blob = encode(np.array([[1.0, 2.0]], dtype=np.float32))
    assert blob[:8] == b"MAM2TNSR"
    assert blob[8:10] == b"\x01\x00"  # version 1
    assert blob[12:14] == b"\x02\x00"  # rank 2
    assert blob[14:22] == (1).to_bytes(8, "little")
    assert blob[-4:] == np.float32(2.0).tobytes()


@pytest.mark.parametrize("mutate,field", [
    (lambda b: b[:-3], "payload"),
    (lambda b: b"NOTMAGIC" + b[8:], "magic"),
    (lambda b: b[:8] + b"\x09\x00" + b[10:], "version"),
    (lambda b: b[:10] + b"\x63\x00" + b[12:], "dtype"),
    (lambda b: b[:5], "header"),
    (lambda b: b[:18], "extents"),
])
def test_format_errors_name_field(mutate, field):
    blob = encode(np.zeros((2, 3), dtype=np.float32))
    with pytest.raises(FormatError) as exc:
        decode(mutate(blob))
    assert exc.value.field == field


def test_truncated_file_raises_without_partial(tmp_path):
    path = tmp_path / "t.tnsr"
    path.write_bytes(encode(np.ones(10, dtype=np.float64))[:-1])
    with pytest.raises(FormatError):
        read_array(path)


# corpus

def test_corpus_layout(tmp_path):
    root = make_corpus(tmp_path / "c", n_train=6, n_val=3, T=4, size=16, stride=2, seed=1)
    assert sorted(p.name for p in (root / "clips" / "train").iterdir()) == [f"{i}.tnsr" for i in range(6)]
    labels = read_labels(root)
    assert labels == {i: i % 4 for i in range(9)}
    clips, y = load_split(root, "val")
    assert clips.shape == (3, 4, 3, 16, 16) and y.tolist() == [6 % 4, 7 % 4, 8 % 4]


def test_missing_split(tmp_path):
    make_corpus(tmp_path, 1, 0, 4, 16, 1)
    with pytest.raises(UsageError):
        load_split(tmp_path, "val")
