import numpy as np
import pytest
from PIL import Image

from ndec.images import (ImageBuffer, ImageFormatError, load_images, read_pnm, save_images,
                         write_pgm_array, write_pnm)


def test_buffer_validation():
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((1, 5)))
    with pytest.raises(ValueError):
        ImageBuffer(np.full((3, 3), 1.5))
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((3, 3, 2)))


def test_gray_uses_luma():
    img = ImageBuffer(np.tile([1.0, 0.0, 0.0], (2, 2, 1)))
    np.testing.assert_allclose(img.gray(), 0.299)


@pytest.mark.parametrize("channels", [1, 3])
def test_round_trip_through_8bit(tmp_path, rng, channels):
    px = rng.uniform(size=(5, 7, channels))
    write_pnm(tmp_path / "a.pnm", ImageBuffer(px))
    back = read_pnm(tmp_path / "a.pnm")
    assert back.pixels.shape == (5, 7, channels)
    np.testing.assert_allclose(back.pixels, np.rint(px * 255) / 255, atol=1e-12)


@pytest.mark.parametrize("channels, mode", [(1, "L"), (3, "RGB")])
def test_reference_reader_agrees(tmp_path, rng, channels, mode):
    px = rng.uniform(size=(6, 4, channels))
    path = tmp_path / ("a.pgm" if channels == 1 else "a.ppm")
    write_pnm(path, ImageBuffer(px))
    with Image.open(path) as im:
        assert im.mode == mode and im.size == (4, 6)
        ref = np.asarray(im, dtype=np.float64).reshape(6, 4, channels)
    np.testing.assert_array_equal(ref, np.rint(px * 255))


def test_header_comments_are_skipped(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    np.testing.assert_allclose(read_pnm(tmp_path / "c.pgm").pixels[:, :, 0],
                               np.array([[0, 255], [128, 64]]) / 255)


def test_bad_files(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(ImageFormatError):
        read_pnm(tmp_path / "x.pgm")
    (tmp_path / "t.pgm").write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(ImageFormatError):
        read_pnm(tmp_path / "t.pgm")


def test_pgm_array_strip_parses(tmp_path):
    write_pgm_array(tmp_path / "s.pgm", np.linspace(0, 1, 5), 0.0, 1.0)
    with Image.open(tmp_path / "s.pgm") as im:
        a = np.asarray(im)
    assert a.shape == (2, 5)
    assert a[0].tolist() == [0, 64, 128, 191, 255]


def test_save_load_directory(tmp_path, rng):
    imgs = [ImageBuffer(rng.uniform(size=(3, 3, 3))) for _ in range(3)]
    save_images(tmp_path / "imgs", imgs)
    assert len(load_images(tmp_path / "imgs")) == 3
