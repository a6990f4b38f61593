import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from mamifuse.errors import ImageDecodeError
from mamifuse.images import (
    AugmentParams,
    apply_augment,
    five_crop,
    load_and_resize,
    sample_rng,
    to_tensor,
    train_augment,
    tta_average,
)


class ForcedRng:
    """Stands in for a Generator: fixed scale draw, crop at origin, chosen flips."""

    def __init__(self, scale=1.0, hflip=False, vflip=False):
        self.scale = scale
        self.flips = [hflip, vflip]

    def uniform(self, lo, hi):
        return self.scale

    def integers(self, lo, hi):
        return 0

    def random(self):
        return 0.0 if self.flips.pop(0) else 0.99


def _save(tmp_path, arr, name="x.png"):
    p = tmp_path / name
    Image.fromarray(arr).save(p)
    return p


def test_downscale(tmp_path):
    out = load_and_resize(_save(tmp_path, np.zeros((512, 512, 3), np.uint8)), 256)
    assert out.shape == (256, 256, 3)


def test_identity_size(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, (256, 256, 3), dtype=np.uint8)
    out = load_and_resize(_save(tmp_path, arr), 256)
    assert out.shape == (256, 256, 3)
    np.testing.assert_array_equal(out, arr / np.float32(255.0))


def test_constant_gray_stays_constant(tmp_path):
    out = load_and_resize(_save(tmp_path, np.full((100, 300, 3), 137, np.uint8)), 256)
    assert out.shape == (256, 256, 3)
    assert np.abs(out - 137 / 255).max() <= 1 / 255


def test_decode_error_names_sample(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(ImageDecodeError, match="meme_7"):
        load_and_resize(bad, sample_id="meme_7")


def test_missing_file_is_decode_error(tmp_path):
    with pytest.raises(ImageDecodeError):
        load_and_resize(tmp_path / "nope.png", sample_id="x")


@pytest.fixture
def img():
    return np.random.default_rng(1).random((32, 32, 3), dtype=np.float32)


def test_forced_identity(img):
    np.testing.assert_array_equal(train_augment(img, ForcedRng()), img)


def test_forced_hflip(img):
    out = train_augment(img, ForcedRng(hflip=True))
    np.testing.assert_array_equal(out, img[:, ::-1])
    np.testing.assert_array_equal(train_augment(out, ForcedRng(hflip=True)), img)


def test_forced_vflip(img):
    np.testing.assert_array_equal(train_augment(img, ForcedRng(vflip=True)), img[::-1])


@given(st.integers(0, 2**32 - 1))
def test_augment_shape_and_range(seed):
    img = np.random.default_rng(seed).random((24, 24, 3), dtype=np.float32)
    rng = np.random.default_rng(seed)
    once = train_augment(img, rng)
    twice = train_augment(once, rng)
    for out in (once, twice):
        assert out.shape == img.shape
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_crop_area_within_scale_range():
    for seed in range(50):
        from mamifuse.images import sample_augment_params

        p = sample_augment_params(np.random.default_rng(seed), 256)
        assert 0.8 - 0.01 <= (p.side / 256) ** 2 <= 1.0


def test_sample_rng_reproducible():
    a = sample_rng(3, "id", 1).random(4)
    np.testing.assert_array_equal(a, sample_rng(3, "id", 1).random(4))
    assert not np.array_equal(a, sample_rng(3, "id", 2).random(4))
    assert not np.array_equal(a, sample_rng(3, "other", 1).random(4))


def test_five_crop_center_origin():
    img = np.arange(256 * 256 * 3, dtype=np.float32).reshape(256, 256, 3)
    crops = five_crop(img, 224)
    assert len(crops) == 5
    np.testing.assert_array_equal(crops[4], img[16:240, 16:240])
    np.testing.assert_array_equal(crops[0], img[:224, :224])
    np.testing.assert_array_equal(crops[3], img[32:, 32:])


def test_five_crop_full_size(img):
    assert all(np.array_equal(c, img) for c in five_crop(img, 32))


def test_five_crop_constant_small():
    img = np.full((4, 4, 3), 0.25, np.float32)
    crops = five_crop(img, 2)
    assert all(c.shape == (2, 2, 3) and (c == 0.25).all() for c in crops)


def test_five_crop_too_large(img):
    with pytest.raises(ValueError):
        five_crop(img, 33)


@given(arrays(np.float32, (9, 11, 3), elements=st.floats(0, 1, width=32)), st.integers(1, 9))
def test_five_crop_exact_subrectangles(img, crop):
    h, w = img.shape[:2]
    origins = [(0, 0), (0, w - crop), (h - crop, 0), (h - crop, w - crop), ((h - crop) // 2, (w - crop) // 2)]
    for c, (y, x) in zip(five_crop(img, crop), origins):
        np.testing.assert_array_equal(c, img[y : y + crop, x : x + crop])


def test_tta_examples():
    assert tta_average([[0.2], [0.4], [0.6], [0.8], [1.0]]) == pytest.approx([0.6])
    np.testing.assert_array_equal(tta_average([[0.3, 0.7]] * 5), [0.3, 0.7])
    np.testing.assert_array_equal(tta_average([[1, 0], [0, 1]]), [0.5, 0.5])
    with pytest.raises(ValueError):
        tta_average([])


@given(st.lists(arrays(np.float64, (3,), elements=st.floats(0, 1)), min_size=1, max_size=6), st.randoms())
def test_tta_permutation_invariant(rows, rnd):
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    np.testing.assert_array_equal(tta_average(rows), tta_average(shuffled))


def test_to_tensor_layout(img):
    t = to_tensor([img, img])
    assert tuple(t.shape) == (2, 3, 32, 32)
    assert float(t[1, 2, 5, 7]) == img[5, 7, 2]


def test_apply_augment_crop_then_resize(img):
    out = apply_augment(img, AugmentParams(side=16, top=4, left=8, hflip=False, vflip=False))
    assert out.shape == img.shape
