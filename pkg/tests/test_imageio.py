import numpy as np
import pytest

from qfm.errors import ImageFormatError
from qfm.imageio import read_image, read_pgm, write_image


@pytest.mark.parametrize("bits", [8, 16])
@pytest.mark.parametrize("suffix", [".pgm", ".png"])
def test_integer_round_trip(tmp_path, suffix, bits):
    maxval = (1 << bits) - 1
    ints = np.random.default_rng(0).integers(0, maxval + 1, size=(13, 9))
    img = ints / maxval
    path = tmp_path / f"img{suffix}"
    write_image(path, img, bits=bits)
    back = read_image(path)
    assert back.shape == (13, 9)
    assert np.array_equal(np.rint(back * maxval), ints)


def test_pgm_16bit_is_big_endian(tmp_path):
    path = tmp_path / "a.pgm"
    write_image(path, np.array([[1.0, 0.0]]), bits=16)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n2 1\n65535\n")
    assert raw.endswith(b"\xff\xff\x00\x00")


def test_pgm_header_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# comment\n2 2\n# another\n255\n" + bytes([0, 51, 102, 255]))
    assert np.allclose(read_pgm(path), [[0, 0.2], [0.4, 1.0]])


def test_npy_keeps_out_of_range_values(tmp_path):
    img = np.array([[-0.5, 1.5], [0.25, 0.75]])
    write_image(tmp_path / "a.npy", img)
    assert np.array_equal(read_image(tmp_path / "a.npy"), img)


def test_integer_formats_refuse_unclipped_values(tmp_path):
    img = np.array([[-0.5, 1.5]])
    with pytest.raises(ImageFormatError):
        write_image(tmp_path / "a.png", img)
    write_image(tmp_path / "a.png", img, clip=True)
    assert np.array_equal(read_image(tmp_path / "a.png"), [[0.0, 1.0]])


def test_rgb_png_is_averaged(tmp_path):
    from PIL import Image

    arr = np.zeros((2, 2, 3), dtype=np.uint8)
    arr[..., 0] = 255
    Image.fromarray(arr, mode="RGB").save(tmp_path / "rgb.png")
    assert np.allclose(read_image(tmp_path / "rgb.png"), 1 / 3)


def test_bad_files(tmp_path):
    (tmp_path / "p2.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "p2.pgm")
    (tmp_path / "short.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "short.pgm")
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "x.tiff")
