import numpy as np
import pytest

from rrquant.imaging import bicubic_upsample, box_downsample, list_images, psnr, read_image, write_pgm


def test_pgm_roundtrip_8bit(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7)) / 255.0
    write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n7 5\n255\n")
    np.testing.assert_array_equal(read_image(tmp_path / "a.pgm"), img)


def test_pgm_roundtrip_16bit(tmp_path):
    img = np.random.default_rng(1).integers(0, 65536, (4, 3)) / 65535.0
    write_pgm(tmp_path / "b.pgm", img, bits=16)
    np.testing.assert_array_equal(read_image(tmp_path / "b.pgm"), img)


def test_write_clips(tmp_path):
    write_pgm(tmp_path / "c.pgm", np.array([[-1.0, 2.0]]))
    np.testing.assert_array_equal(read_image(tmp_path / "c.pgm"), [[0.0, 1.0]])


def test_list_images(tmp_path):
    for name in ("b.pgm", "a.pgm", "notes.txt"):
        (tmp_path / name).write_bytes(b"")
    assert [p.name for p in list_images(tmp_path)] == ["a.pgm", "b.pgm"]


def test_box_downsample():
    img = np.arange(16, dtype=float).reshape(4, 4)
    np.testing.assert_array_equal(box_downsample(img, 2), [[2.5, 4.5], [10.5, 12.5]])
    with pytest.raises(ValueError):
        box_downsample(img, 3)


def test_bicubic_identity_at_factor_one():
    img = np.random.default_rng(2).random((6, 9))
    np.testing.assert_array_equal(bicubic_upsample(img, 1), img)


def test_bicubic_preserves_constants_and_ramps():
    np.testing.assert_allclose(bicubic_upsample(np.full((3, 4), 0.7), 4), 0.7, atol=1e-15)
    ramp = np.tile(np.arange(8, dtype=float), (8, 1))
    up = bicubic_upsample(ramp, 2)
    # away from the clamped borders a Catmull-Rom kernel reproduces linear data
    expected = (np.arange(16) + 0.5) / 2 - 0.5
    np.testing.assert_allclose(up[:, 4:12], np.tile(expected[4:12], (16, 1)), atol=1e-12)


def test_psnr():
    a = np.zeros((2, 2))
    assert psnr(a, a) == float("inf")
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
