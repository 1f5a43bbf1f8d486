import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image as PILImage

from gsure_restore.image import PSNR_CAP, add_gaussian_noise, as_image, load_image, psnr, save_image


def write_png(path, arr, mode):
    PILImage.fromarray(np.asarray(arr, dtype=np.uint8), mode=mode).save(path)


def test_load_white_png(tmp_path):
    p = tmp_path / "white.png"
    write_png(p, np.full((2, 2), 255), "L")
    img = load_image(p)
    assert img.shape == (1, 2, 2)
    assert np.all(img == 255.0)


def test_load_black_pixel(tmp_path):
    p = tmp_path / "black.png"
    write_png(p, np.zeros((1, 1)), "L")
    assert load_image(p).tolist() == [[[0.0]]]


def test_load_rgb_channel_order(tmp_path):
    p = tmp_path / "rgb.png"
    arr = np.zeros((2, 3, 3), dtype=np.uint8)
    arr[..., 0] = 10
    arr[..., 1] = 20
    arr[..., 2] = 30
    write_png(p, arr, "RGB")
    img = load_image(p)
    assert img.shape == (3, 2, 3)
    assert img[:, 0, 0].tolist() == [10.0, 20.0, 30.0]


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")


def test_load_rejects_16_bit(tmp_path):
    p = tmp_path / "deep.png"
    PILImage.fromarray(np.full((4, 4), 40000, dtype=np.uint16)).save(p)
    with pytest.raises(ValueError, match="unsupported"):
        load_image(p)


def test_load_rejects_non_png(tmp_path):
    p = tmp_path / "img.bmp"
    PILImage.fromarray(np.zeros((2, 2), dtype=np.uint8)).save(p, format="BMP")
    with pytest.raises(ValueError, match="PNG"):
        load_image(p)


@pytest.mark.parametrize("value, expected", [(300.0, 255), (-5.0, 0), (127.6, 128), (127.5, 128), (127.4, 127)])
def test_save_clamps_and_rounds(tmp_path, value, expected):
    p = tmp_path / "px.png"
    save_image(np.array([[[value]]]), p)
    assert np.asarray(PILImage.open(p))[0, 0] == expected


def test_save_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_image(np.zeros((1, 2, 2)), tmp_path / "missing-dir" / "x.png")


@pytest.mark.parametrize("channels", [1, 3])
def test_round_trip_within_quantization(tmp_path, channels):
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 255, size=(channels, 7, 5))
    p = tmp_path / "rt.png"
    save_image(img, p)
    back = load_image(p)
    # quantize-compare oracle: nearest integer, half-up
    np.testing.assert_array_equal(back, np.floor(img + 0.5))
    assert np.max(np.abs(back - img)) <= 0.5


def test_noise_zero_sigma_is_identity():
    img = np.arange(12.0).reshape(1, 3, 4)
    np.testing.assert_array_equal(add_gaussian_noise(img, 0.0, seed=1), img)


def test_noise_variance_scenario_one():
    img = np.full((1, 400, 400), 100.0)
    out = add_gaussian_noise(img, math.sqrt(2.0), seed=7)
    var = np.var(out - img)
    assert abs(var - 2.0) / 2.0 < 0.05


def test_noise_deterministic_and_seed_sensitive():
    img = np.zeros((3, 8, 8))
    a = add_gaussian_noise(img, 5.0, seed=11)
    b = add_gaussian_noise(img, 5.0, seed=11)
    c = add_gaussian_noise(img, 5.0, seed=12)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_noise_rejects_negative_sigma():
    with pytest.raises(ValueError):
        add_gaussian_noise(np.zeros((1, 2, 2)), -1.0, seed=0)


def test_psnr_identical_is_capped():
    a = np.ones((1, 4, 4))
    assert psnr(a, a) == PSNR_CAP


def test_psnr_unit_mse():
    a = np.zeros((1, 4, 4))
    b = a.copy()
    b[0, ::2] += 1.0
    b[0, 1::2] -= 1.0
    assert psnr(a, b) == pytest.approx(48.1308, abs=1e-4)
    assert psnr(a, b) == pytest.approx(20 * math.log10(255), abs=1e-12)


def test_psnr_constant_offset():
    a = np.random.default_rng(0).uniform(0, 200, size=(3, 5, 5))
    assert psnr(a, a + 16) == pytest.approx(20 * math.log10(255 / 16), abs=1e-12)
    assert psnr(a, a + 16) == pytest.approx(24.0484, abs=1e-4)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))


def test_as_image_is_read_only():
    img = as_image(np.zeros((4, 4)))
    assert img.shape == (1, 4, 4)
    with pytest.raises(ValueError):
        img[0, 0, 0] = 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), offset=st.floats(0.1, 50))
def test_psnr_symmetric(seed, offset):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 255, size=(1, 4, 4))
    b = a + offset * rng.standard_normal(a.shape)
    assert psnr(a, b) == psnr(b, a)
