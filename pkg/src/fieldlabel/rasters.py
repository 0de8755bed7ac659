"""Depth and mask rasters plus their PNG serialization.

DepthMap values are camera-frame z in millimeters with 0 = missing, stored
as float64 in memory and serialized as 16-bit single-channel PNG. Mask
values are instance ids, class ids, or 0/255 for binary masks.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

MM_PER_M = 1000.0


def atomic_write_bytes(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


@dataclass
class DepthMap:
    """Per-pixel camera-frame z in millimeters; 0 encodes missing."""

    values: np.ndarray  # (H, W) float64, mm

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("DepthMap values must be 2D")
        if np.any(self.values < 0):
            raise ValueError("depth values must be non-negative")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def zeros(width: int, height: int) -> "DepthMap":
        return DepthMap(np.zeros((height, width)))

    @staticmethod
    def from_meters(values_m: np.ndarray) -> "DepthMap":
        return DepthMap(np.asarray(values_m, dtype=np.float64) * MM_PER_M)

    def meters(self) -> np.ndarray:
        return self.values / MM_PER_M

    def to_uint16(self) -> np.ndarray:
        """Round to integer millimeters; values beyond 65535 mm clamp with a warning."""
        v = np.rint(self.values)
        if np.any(v > 65535):
            import warnings

            warnings.warn("depth values beyond 65.535 m clamped during 16-bit serialization")
            v = np.minimum(v, 65535)
        return v.astype(np.uint16)

    def save_png(self, path: str) -> None:
        import io

        buf = io.BytesIO()
        Image.fromarray(self.to_uint16()).save(buf, format="PNG")
        atomic_write_bytes(path, buf.getvalue())

    @staticmethod
    def load_png(path: str) -> "DepthMap":
        arr = np.array(Image.open(path))
        if arr.ndim != 2:
            raise ValueError(f"{path}: depth PNG must be single-channel")
        return DepthMap(arr.astype(np.float64))


@dataclass
class MaskImage:
    """Per-pixel id raster: instance ids, class ids, or binary 0/255."""

    values: np.ndarray  # (H, W) unsigned integer

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("MaskImage values must be 2D")
        if v.dtype not in (np.uint8, np.uint16):
            v = v.astype(np.uint16)
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def save_png(self, path: str) -> None:
        import io

        buf = io.BytesIO()
        Image.fromarray(self.values).save(buf, format="PNG")
        atomic_write_bytes(path, buf.getvalue())

    @staticmethod
    def load_png(path: str) -> "MaskImage":
        arr = np.array(Image.open(path))
        if arr.ndim != 2:
            raise ValueError(f"{path}: mask PNG must be single-channel")
        return MaskImage(arr)


def save_rgb_png(path: str, rgb: np.ndarray) -> None:
    import io

    buf = io.BytesIO()
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
