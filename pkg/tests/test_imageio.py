import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from gramdet.imageio import ImageFormatError, load_image, load_mask, save_image, save_mask
from gramdet.raster import Label


def _png(path, arr, mode=None):
    Image.fromarray(arr, mode=mode).save(path) if mode else Image.fromarray(arr).save(path)
    return path


class TestLoadImage:
    def test_8bit_scaling(self, tmp_path):
        p = _png(tmp_path / "a.png", np.array([[0, 255], [128, 64]], dtype=np.uint8))
        np.testing.assert_array_equal(load_image(p), [[0.0, 1.0], [128 / 255, 64 / 255]])

    def test_one_pixel_zero(self, tmp_path):
        p = _png(tmp_path / "z.png", np.zeros((1, 1), dtype=np.uint8))
        assert load_image(p).tolist() == [[0.0]]

    def test_16bit(self, tmp_path):
        arr = np.array([[0, 65535], [1000, 30000]], dtype=np.uint16)
        p = _png(tmp_path / "b.png", arr)
        np.testing.assert_array_equal(load_image(p), arr / 65535.0)

    def test_rgb_rejected(self, tmp_path):
        p = _png(tmp_path / "rgb.png", np.zeros((2, 2, 3), dtype=np.uint8))
        with pytest.raises(ImageFormatError, match="multi-channel input"):
            load_image(p)

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    def test_unsupported_depth(self, tmp_path):
        p = tmp_path / "bw.png"
        Image.new("1", (2, 2)).save(p)
        with pytest.raises(ImageFormatError, match="bit depth"):
            load_image(p)

    def test_text_raster(self, tmp_path):
        p = tmp_path / "t.txt"
        p.write_text("3 2\n0 0.5 1\n0.25 0.75 0.125\n")
        np.testing.assert_array_equal(load_image(p), [[0, 0.5, 1], [0.25, 0.75, 0.125]])

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.uint16, st.tuples(st.integers(1, 6), st.integers(1, 6))))
    def test_png_round_trip(self, tmp_path_factory, raw):
        d = tmp_path_factory.mktemp("rt")
        p1, p2 = d / "a.png", d / "b.png"
        _png(p1, raw)
        img = load_image(p1)
        save_image(p2, img)
        np.testing.assert_array_equal(load_image(p2), img)
        assert p1.read_bytes() == p2.read_bytes()

    def test_text_round_trip(self, tmp_path, rng):
        img = rng.random((3, 4))
        save_image(tmp_path / "x.txt", img)
        np.testing.assert_array_equal(load_image(tmp_path / "x.txt"), img)


class TestLoadMask:
    def test_codes(self, tmp_path):
        p = _png(tmp_path / "m.png", np.array([[0, 128, 255]], dtype=np.uint8))
        assert load_mask(p).tolist() == [[Label.BACKGROUND, Label.OBJECT, Label.CONFUSER]]

    def test_all_zero(self, tmp_path):
        p = _png(tmp_path / "m.png", np.zeros((3, 3), dtype=np.uint8))
        assert (load_mask(p) == Label.BACKGROUND).all()

    def test_bad_value_reports_position(self, tmp_path):
        arr = np.zeros((3, 4), dtype=np.uint8)
        arr[2, 1] = 7
        p = _png(tmp_path / "m.png", arr)
        with pytest.raises(ImageFormatError, match=r"7 at \(x=1, y=2\)"):
            load_mask(p)

    def test_round_trip(self, tmp_path, rng):
        labels = rng.integers(0, 3, (5, 6)).astype(np.uint8)
        save_mask(tmp_path / "m.png", labels)
        np.testing.assert_array_equal(load_mask(tmp_path / "m.png"), labels)
