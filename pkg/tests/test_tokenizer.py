import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockspot.tokenizer import (
    DEFAULT_CHARSET,
    IndivisibleDims,
    UnknownId,
    UnknownSymbol,
    Vocab,
    as_raster,
    pad_batch,
    patch_count,
    patch_image,
    resize,
    sequence_layout,
    unpatch,
)
from oracles import bilinear_reference


def test_patch_count_recognizer_input():
    assert patch_count(64, 256, 8, 8) == 256
    assert patch_image(np.zeros((64, 256, 3))).shape == (256, 192)


def test_patch_count_indivisible():
    with pytest.raises(IndivisibleDims):
        patch_count(65, 256)
    with pytest.raises(IndivisibleDims):
        patch_image(np.zeros((64, 250, 3)))


def test_patch_raster_order():
    img = np.zeros((16, 24, 1))
    img[8:16, 0:8] = 1.0  # second patch row, first column
    p = patch_image(img)
    assert p.shape == (6, 64)
    assert np.flatnonzero(p.sum(axis=1)).tolist() == [3]


def test_patch_channel_last_flattening():
    img = np.arange(8 * 8 * 3, dtype=np.float64).reshape(8, 8, 3)
    assert np.array_equal(patch_image(img)[0], img.reshape(-1))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]), st.integers(0, 2**31))
def test_unpatch_roundtrip(rows, cols, c, seed):
    img = np.random.default_rng(seed).random((rows * 8, cols * 8, c))
    assert np.array_equal(unpatch(patch_image(img), rows * 8, cols * 8), img)


def test_uint8_scaled():
    img = np.full((8, 8), 255, dtype=np.uint8)
    assert as_raster(img).max() == 1.0


def test_resize_identity_returns_copy():
    img = np.random.default_rng(0).random((10, 12, 3))
    out = resize(img, 10, 12)
    assert np.array_equal(out, img)
    out[0, 0, 0] = -1
    assert img[0, 0, 0] != -1


def test_resize_constant_image():
    img = np.full((13, 7, 3), 0.37)
    assert np.allclose(resize(img, 64, 256), 0.37, atol=1e-15)


@pytest.mark.parametrize("shape,target", [((8, 8, 1), (64, 256)), ((40, 90, 3), (64, 256)),
                                          ((64, 256, 3), (17, 33)), ((5, 3, 1), (4, 9))])
def test_resize_matches_reference(shape, target):
    img = np.random.default_rng(1).random(shape)
    if shape == (8, 8, 1):
        img = (np.indices((8, 8)).sum(axis=0) % 2).astype(float)[:, :, None]  # checkerboard
    assert np.allclose(resize(img, *target), bilinear_reference(img, *target), atol=1e-12)


def test_vocab_layout():
    v = Vocab()
    assert (v.pad_id, v.sep_id, v.eos_id) == (0, 1, 2)
    assert len(v) == 3 + len(DEFAULT_CHARSET)
    assert Vocab.from_json(v.to_json()) == v


def test_encode_decode_roundtrip_random_strings():
    v = Vocab()
    rng = np.random.default_rng(5)
    chars = np.array(list(DEFAULT_CHARSET))
    for _ in range(1000):
        s = "".join(rng.choice(chars, size=int(rng.integers(0, 20))))
        assert v.decode(v.encode(s)) == s


def test_decode_stops_at_eos_and_skips_pad_sep():
    v = Vocab("AB")
    a, b = v.encode("AB")
    assert v.decode([v.sep_id, a, v.pad_id, b, v.eos_id, a]) == "AB"


def test_unknown_symbols_and_ids():
    v = Vocab("AB")
    with pytest.raises(UnknownSymbol):
        v.encode("C")
    with pytest.raises(UnknownSymbol):
        v.encode("[EOS]")
    with pytest.raises(UnknownId):
        v.decode([99])


def test_vocab_rejects_duplicates():
    with pytest.raises(ValueError):
        Vocab("AA")


def test_sequence_layout_and_padding():
    assert sequence_layout(256, 5) == (257, 262)
    assert pad_batch([[3, 4], [5]]).tolist() == [[3, 4], [5, 0]]
