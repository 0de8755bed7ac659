import os

import numpy as np
import pytest
from PIL import Image

from fieldlabel.rasters import (
    MM_PER_M,
    DepthMap,
    MaskImage,
    atomic_write_bytes,
    save_rgb_png,
)


class TestDepthMap:
    def test_meters_round_trip(self):
        m = np.array([[0.0, 1.5], [2.25, 0.001]])
        d = DepthMap.from_meters(m)
        assert np.array_equal(d.values, m * MM_PER_M)
        assert np.array_equal(d.meters(), m)

    def test_zeros(self):
        d = DepthMap.zeros(width=7, height=3)
        assert d.values.shape == (3, 7)
        assert d.width == 7 and d.height == 3
        assert not d.values.any()

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            DepthMap(values=np.array([[-1.0]]))

    def test_uint16_rounding(self):
        d = DepthMap(values=np.array([[1499.4, 1499.6, 0.0]]))
        u = d.to_uint16()
        assert u.dtype == np.uint16
        assert u.tolist() == [[1499, 1500, 0]]

    def test_uint16_clamp_warns(self):
        d = DepthMap(values=np.array([[70000.0]]))
        with pytest.warns(UserWarning, match="clamp"):
            u = d.to_uint16()
        assert u[0, 0] == 65535

    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(20)
        mm = rng.integers(0, 5000, size=(12, 9)).astype(np.float64)
        mm[0, 0] = 0.0
        d = DepthMap(values=mm)
        p = os.path.join(tmp_path, "d.png")
        d.save_png(p)
        back = DepthMap.load_png(p)
        assert np.array_equal(back.values, mm)
        # serialized form is a genuine 16-bit single channel PNG
        img = Image.open(p)
        assert img.mode in ("I", "I;16")

    def test_load_rejects_rgb(self, tmp_path):
        p = os.path.join(tmp_path, "rgb.png")
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(p)
        with pytest.raises(ValueError, match="single-channel"):
            DepthMap.load_png(p)


class TestMaskImage:
    def test_uint8_round_trip(self, tmp_path):
        m = MaskImage(values=np.arange(12, dtype=np.uint8).reshape(3, 4))
        p = os.path.join(tmp_path, "m8.png")
        m.save_png(p)
        back = MaskImage.load_png(p)
        assert back.values.dtype == np.uint8
        assert np.array_equal(back.values, m.values)

    def test_uint16_round_trip(self, tmp_path):
        vals = np.array([[0, 300], [65535, 7]], dtype=np.uint16)
        m = MaskImage(values=vals)
        p = os.path.join(tmp_path, "m16.png")
        m.save_png(p)
        back = MaskImage.load_png(p)
        assert back.values.dtype == np.uint16
        assert np.array_equal(back.values, vals)

    def test_other_dtypes_coerced_to_uint16(self):
        m = MaskImage(values=np.array([[1, 2], [3, 4]], dtype=np.int64))
        assert m.values.dtype == np.uint16

    def test_must_be_2d(self):
        with pytest.raises(ValueError, match="2D"):
            MaskImage(values=np.zeros((2, 2, 3), dtype=np.uint8))


class TestAtomicWrite:
    def test_writes_bytes(self, tmp_path):
        p = os.path.join(tmp_path, "sub", "x.bin")
        os.makedirs(os.path.dirname(p))
        atomic_write_bytes(p, b"hello")
        with open(p, "rb") as f:
            assert f.read() == b"hello"

    def test_overwrites(self, tmp_path):
        p = os.path.join(tmp_path, "x.bin")
        atomic_write_bytes(p, b"one")
        atomic_write_bytes(p, b"two")
        with open(p, "rb") as f:
            assert f.read() == b"two"
        # no stray temp files left behind
        assert os.listdir(tmp_path) == ["x.bin"]


def test_save_rgb_png(tmp_path):
    rgb = np.zeros((5, 6, 3), dtype=np.uint8)
    rgb[2, 3] = (255, 10, 0)
    p = os.path.join(tmp_path, "c.png")
    save_rgb_png(p, rgb)
    back = np.asarray(Image.open(p))
    assert np.array_equal(back, rgb)
