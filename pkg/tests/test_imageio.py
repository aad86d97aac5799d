import io

import numpy as np
import pytest
from PIL import Image

from ssimlab.harness import BUNDLED_IMAGE
from ssimlab.imageio import ImageFormatError, load_image, read_pgm, save_image, write_pgm


def test_two_by_two_p5(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    F = load_image(path)
    np.testing.assert_array_equal(F.values, [[0.0, 1.0], [128 / 255, 64 / 255]])
    assert F.nonneg_checked
    assert F.grid.domain.b == 1.0


def test_header_comments_and_whitespace():
    data = b"P5 # comment\n# another\n3\t1 \n  255\n" + bytes([1, 2, 3])
    img, maxval = read_pgm(data)
    assert maxval == 255
    assert img.tolist() == [[1, 2, 3]]


def test_round_trip(tmp_path, rng):
    src = tmp_path / "src.pgm"
    src.write_bytes(write_pgm(rng.integers(0, 256, (7, 9))))
    once = load_image(src)
    out = tmp_path / "out.pgm"
    save_image(once, out)
    assert np.array_equal(load_image(out).values, once.values)
    assert out.read_bytes() == src.read_bytes()


def test_sixteen_bit_matches_reference_decoder(tmp_path, rng):
    samples = rng.integers(0, 65536, (5, 6))
    samples[0, 0], samples[0, 1] = 0x0102, 65535
    data = write_pgm(samples, 65535)
    raster = data[len(b"P5\n6 5\n65535\n"):]
    assert raster[:4] == bytes([0x01, 0x02, 0xFF, 0xFF])
    img, maxval = read_pgm(data)
    assert maxval == 65535
    with Image.open(io.BytesIO(data)) as ref:
        np.testing.assert_array_equal(img, np.asarray(ref).astype(np.int64))
    path = tmp_path / "deep.pgm"
    path.write_bytes(data)
    np.testing.assert_array_equal(load_image(path).values, samples / 65535)


def test_eight_bit_matches_reference_decoder():
    data = BUNDLED_IMAGE.read_bytes()
    img, _ = read_pgm(data)
    with Image.open(io.BytesIO(data)) as ref:
        np.testing.assert_array_equal(img, np.asarray(ref))
    assert img.shape == (256, 256)


@pytest.mark.parametrize(
    "data",
    [
        b"P2\n2 2\n255\n0 0 0 0",
        b"P5\n2 2\n",
        b"P5\n2 x\n255\n" + bytes(4),
        b"P5\n2 2\n255\n" + bytes(3),
        b"P5\n2 2\n0\n" + bytes(4),
        b"P5\n1 1\n100\n" + bytes([200]),
    ],
)
def test_malformed_input(data):
    with pytest.raises(ImageFormatError):
        read_pgm(data)


def test_unsupported_format(tmp_path):
    p = tmp_path / "x.bmp"
    p.write_bytes(b"BM" + bytes(20))
    with pytest.raises(ImageFormatError):
        load_image(p)


def test_png_behind_feature_flag(tmp_path, monkeypatch):
    arr = np.array([[0, 51], [102, 255]], dtype=np.uint8)
    p = tmp_path / "a.png"
    Image.fromarray(arr).save(p)
    np.testing.assert_array_equal(load_image(p).values, arr / 255)
    monkeypatch.setenv("SSIMLAB_PNG", "0")
    with pytest.raises(ImageFormatError, match="disabled"):
        load_image(p)


def test_write_rejects_out_of_range():
    with pytest.raises(ValueError):
        write_pgm(np.array([[256]]), 255)
