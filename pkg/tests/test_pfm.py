import numpy as np
import pytest

from relightfield import pfm


def test_color_roundtrip(tmp_path, rng):
    img = rng.random((7, 5, 3)) * 10.0
    path = tmp_path / "img.pfm"
    pfm.write_pfm(path, img)
    back = pfm.read_pfm(path)
    np.testing.assert_allclose(back, img.astype(np.float32), rtol=0, atol=0)


def test_gray_roundtrip(tmp_path, rng):
    img = rng.random((4, 9))
    path = tmp_path / "img.pfm"
    pfm.write_pfm(path, img)
    back = pfm.read_pfm(path)
    assert back.shape == (4, 9)
    np.testing.assert_array_equal(back, img.astype(np.float32))


def test_scanlines_bottom_up(tmp_path):
    img = np.zeros((2, 1, 3))
    img[0] = 1.0  # top row
    path = tmp_path / "img.pfm"
    pfm.write_pfm(path, img)
    raw = path.read_bytes()
    header_end = raw.index(b"-1.0\n") + 5
    first_px = np.frombuffer(raw[header_end : header_end + 12], dtype="<f4")
    # bottom row (zeros) must come first in the file
    np.testing.assert_array_equal(first_px, [0, 0, 0])


def test_rejects_nonfinite(tmp_path):
    img = np.full((2, 2, 3), np.inf)
    with pytest.raises(ValueError):
        pfm.write_pfm(tmp_path / "bad.pfm", img)


def test_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        pfm.write_pfm(tmp_path / "bad.pfm", np.zeros((2, 2, 4)))


def test_read_rejects_garbage(tmp_path):
    p = tmp_path / "junk.pfm"
    p.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ValueError):
        pfm.read_pfm(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "short.pfm"
    p.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 10)
    with pytest.raises(ValueError):
        pfm.read_pfm(p)


def test_png_writer(tmp_path):
    img = np.zeros((3, 4, 3), dtype=np.uint8)
    img[..., 0] = 255
    path = tmp_path / "img.png"
    pfm.write_png(path, img)
    data = path.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert b"IHDR" in data and b"IEND" in data
