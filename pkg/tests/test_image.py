import numpy as np
import pytest
from PIL import Image

from camcond.image import GrayImage, clamp_quantize, load_gray, save_gray, tile_patches


def test_gray_image_basic_properties():
    img = GrayImage(np.zeros((10, 20)))
    assert img.height == 10
    assert img.width == 20
    assert img.data.dtype == np.float64


def test_gray_image_is_immutable():
    img = GrayImage(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        img.data[0, 0] = 1.0


def test_gray_image_rejects_bad_shapes():
    with pytest.raises(ValueError):
        GrayImage(np.zeros((4, 4, 3)))
    with pytest.raises(ValueError):
        GrayImage(np.zeros((0, 4)))
    with pytest.raises(ValueError):
        GrayImage(np.array([[1.0, np.nan], [0.0, 0.0]]))


def test_load_pure_white_png(tmp_path):
    p = tmp_path / "white.png"
    Image.fromarray(np.full((8, 8), 255, dtype=np.uint8), mode="L").save(p)
    img = load_gray(p)
    assert img.data.shape == (8, 8)
    assert np.all(img.data == 255.0)


def test_load_color_png_uses_luma_weights(tmp_path):
    # pure red: 0.299 * 255 = 76.245, kept as float without re-quantization
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[..., 0] = 255
    p = tmp_path / "red.png"
    Image.fromarray(rgb, mode="RGB").save(p)
    img = load_gray(p)
    assert np.allclose(img.data, 76.245, atol=1e-12)


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_gray(tmp_path / "nope.png")


def test_pgm_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    img = GrayImage(rng.integers(0, 256, size=(33, 47)).astype(np.float64))
    p = tmp_path / "a.pgm"
    save_gray(img, p)
    again = load_gray(p)
    assert np.array_equal(img.data, again.data)
    save_gray(again, tmp_path / "b.pgm")
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()


def test_png_round_trip_exact(tmp_path):
    rng = np.random.default_rng(8)
    img = GrayImage(rng.integers(0, 256, size=(16, 24)).astype(np.float64))
    p = tmp_path / "x.png"
    save_gray(img, p)
    assert np.array_equal(load_gray(p).data, img.data)


def test_pgm_with_comment_header(tmp_path):
    payload = b"P5\n# a comment\n3 2\n255\n" + bytes(range(6))
    p = tmp_path / "c.pgm"
    p.write_bytes(payload)
    img = load_gray(p)
    assert img.data.shape == (2, 3)
    assert img.data[1, 2] == 5.0


def test_pgm_rejects_16_bit(tmp_path):
    p = tmp_path / "wide.pgm"
    p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(ValueError):
        load_gray(p)


def test_clamp_quantize_rounds_half_to_even():
    img = GrayImage(np.array([[127.5, 126.5], [-3.2, 260.0]]))
    q = clamp_quantize(img)
    assert q.dtype == np.uint8
    assert q.tolist() == [[128, 126], [0, 255]]


def test_clamp_quantize_idempotent():
    rng = np.random.default_rng(3)
    img = GrayImage(rng.uniform(-20, 280, size=(12, 12)))
    once = clamp_quantize(img)
    twice = clamp_quantize(GrayImage(once.astype(np.float64)))
    assert np.array_equal(once, twice)


def test_tile_patches_counts_and_origins():
    img = GrayImage(np.zeros((192, 256)))
    tiles = tile_patches(img, 64)
    assert len(tiles) == 12  # 4 across, 3 down, remainder dropped
    assert tiles[0].x == 0 and tiles[0].y == 0
    assert tiles[-1].x == 192 and tiles[-1].y == 128

    overlapping = tile_patches(img, 64, stride=32)
    assert len(overlapping) == 7 * 5


def test_tile_patches_are_zero_copy_views():
    img = GrayImage(np.arange(64, dtype=np.float64).reshape(8, 8))
    (tile,) = tile_patches(img, 8)
    assert np.shares_memory(tile.data, img.data)
    with pytest.raises(ValueError):
        tile.data[0, 0] = -1.0


def test_tile_patches_size_too_large():
    img = GrayImage(np.zeros((32, 32)))
    with pytest.raises(ValueError):
        tile_patches(img, 33)


def test_save_gray_unknown_suffix(tmp_path):
    with pytest.raises(ValueError):
        save_gray(GrayImage(np.zeros((2, 2))), tmp_path / "x.tif")
