import numpy as np
import pytest

from refrec.netpbm import (
    chw_to_image,
    image_to_chw,
    probability_to_gray,
    read_mask,
    read_pgm,
    read_ppm,
    write_mask,
    write_pgm,
    write_ppm,
)


def test_ppm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", img)
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")


def test_pgm_with_comment_header(tmp_path):
    pixels = bytes([0, 10, 20, 30, 40, 50])
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n3 2\n255\n" + pixels)
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[0, 10, 20], [30, 40, 50]])


def test_wrong_magic(tmp_path):
    write_pgm(tmp_path / "g.pgm", np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError, match="g.pgm"):
        read_ppm(tmp_path / "g.pgm")


def test_sixteen_bit_rejected(tmp_path):
    (tmp_path / "d.pgm").write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(ValueError, match="8-bit"):
        read_pgm(tmp_path / "d.pgm")


def test_truncated_pixels(tmp_path):
    (tmp_path / "t.ppm").write_bytes(b"P6\n2 2\n255\n\x00\x00\x00")
    with pytest.raises(ValueError, match="Truncated"):
        read_ppm(tmp_path / "t.ppm")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_ppm(tmp_path / "missing.ppm")


def test_mask_round_trip(tmp_path, rng):
    mask = rng.random((6, 6)) < 0.5
    write_mask(tmp_path / "m.pgm", mask)
    np.testing.assert_array_equal(read_mask(tmp_path / "m.pgm"), mask)


def test_mask_with_gray_pixel_rejected(tmp_path):
    img = np.zeros((3, 3), dtype=np.uint8)
    img[1, 1] = 128
    write_pgm(tmp_path / "bad.pgm", img)
    with pytest.raises(ValueError, match="bad.pgm"):
        read_mask(tmp_path / "bad.pgm")


def test_write_validates_arrays(tmp_path):
    with pytest.raises(ValueError):
        write_ppm(tmp_path / "x.ppm", np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", np.zeros((2, 2), dtype=np.float64))


def test_chw_conversion_is_exact(rng):
    img = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    x = image_to_chw(img)
    assert x.shape == (3, 4, 4) and x.min() >= 0.0 and x.max() <= 1.0
    np.testing.assert_array_equal(chw_to_image(x), img)


def test_probability_to_gray():
    np.testing.assert_array_equal(probability_to_gray(np.array([0.0, 0.5, 1.0])), [0, 128, 255])
