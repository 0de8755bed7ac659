"""Rigid transforms, oriented bounding boxes and pinhole projection.

Conventions used everywhere in this package:
  - World and camera coordinates are right-handed, in meters.
  - Cameras are camera-to-world, looking down -Z, +X right, +Y up.
  - z-depth is the distance along the optical axis (positive in front of
    the camera), not the length of the viewing ray.
  - Label poses are stored as unit quaternion (wxyz) + translation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np

if TYPE_CHECKING:
    from .scene import Frame


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_to_matrix(q):
    """Unit quaternion (w, x, y, z) -> 3x3 rotation matrix."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def matrix_to_quat(m):
    """3x3 rotation matrix -> unit quaternion (w, x, y, z), w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dtype=np.float64,
    )


def quat_from_axis_angle(axis, angle_rad):
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation (unit quaternion wxyz) followed by translation, both world units."""

    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.quaternion, other.quaternion) and np.array_equal(
            self.translation, other.translation
        )

    def __post_init__(self):
        object.__setattr__(self, "quaternion", quat_normalize(self.quaternion))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform()

    @staticmethod
    def from_matrix(rotation, translation) -> "RigidTransform":
        return RigidTransform(matrix_to_quat(rotation), np.asarray(translation, dtype=np.float64))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    def apply(self, points):
        """Transform one point (3,) or many (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        r = self.rotation_matrix
        if p.ndim == 1:
            return r @ p + self.translation
        return p @ r.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self * other)(p) == self(other(p))."""
        q = quat_multiply(self.quaternion, other.quaternion)
        t = self.rotation_matrix @ other.translation + self.translation
        return RigidTransform(q, t)

    def invert(self) -> "RigidTransform":
        qw, qx, qy, qz = self.quaternion
        q_inv = np.array([qw, -qx, -qy, -qz])
        t_inv = -(quat_to_matrix(q_inv) @ self.translation)
        return RigidTransform(q_inv, t_inv)

    def to_dict(self) -> dict:
        return {"q": self.quaternion.tolist(), "t": self.translation.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "RigidTransform":
        return RigidTransform(np.asarray(d["q"], dtype=np.float64), np.asarray(d["t"], dtype=np.float64))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(t: RigidTransform) -> RigidTransform:
    return t.invert()


# Corner sign order is documented API: lexicographic over (sx, sy, sz) with - < +.
_CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [-1, -1, +1],
        [-1, +1, -1],
        [-1, +1, +1],
        [+1, -1, -1],
        [+1, -1, +1],
        [+1, +1, -1],
        [+1, +1, +1],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True, eq=False)
class OrientedBox:
    """Box given by the pose of its center frame and positive half extents."""

    pose: RigidTransform
    half_extents: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, OrientedBox):
            return NotImplemented
        return self.pose == other.pose and np.array_equal(
            self.half_extents, other.half_extents
        )

    def __post_init__(self):
        h = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if not np.all(h > 0):
            raise ValueError("half_extents must be positive")
        object.__setattr__(self, "half_extents", h)

    def corners(self) -> np.ndarray:
        """8 world-frame corners, ordered by (±x, ±y, ±z) sign, lexicographic."""
        local = _CORNER_SIGNS * self.half_extents
        return self.pose.apply(local)

    def contains(self, points) -> np.ndarray:
        """Boolean containment test (inclusive faces) for (3,) or (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        single = p.ndim == 1
        local = self.pose.invert().apply(p.reshape(-1, 3))
        inside = np.all(np.abs(local) <= self.half_extents, axis=1)
        return bool(inside[0]) if single else inside

    def inflated(self, factor: float) -> "OrientedBox":
        return OrientedBox(self.pose, self.half_extents * factor)

    def to_dict(self) -> dict:
        return {"pose": self.pose.to_dict(), "half_extents": self.half_extents.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "OrientedBox":
        return OrientedBox(RigidTransform.from_dict(d["pose"]), np.asarray(d["half_extents"]))


def obb_corners(box: OrientedBox) -> np.ndarray:
    return box.corners()


def obb_contains(box: OrientedBox, points):
    return box.contains(points)


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned image-space box, min <= max componentwise, pixels."""

    min_uv: Tuple[float, float]
    max_uv: Tuple[float, float]

    def __post_init__(self):
        if self.min_uv[0] > self.max_uv[0] or self.min_uv[1] > self.max_uv[1]:
            raise ValueError("Box2D min must not exceed max")

    @staticmethod
    def from_points(uv: np.ndarray) -> "Box2D":
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        lo = uv.min(axis=0)
        hi = uv.max(axis=0)
        return Box2D((float(lo[0]), float(lo[1])), (float(hi[0]), float(hi[1])))

    def clipped(self, width: int, height: int) -> "Box2D":
        return Box2D(
            (min(max(self.min_uv[0], 0.0), width - 1.0), min(max(self.min_uv[1], 0.0), height - 1.0)),
            (min(max(self.max_uv[0], 0.0), width - 1.0), min(max(self.max_uv[1], 0.0), height - 1.0)),
        )

    def contains_box(self, other: "Box2D", slack: float = 0.0) -> bool:
        return (
            self.min_uv[0] <= other.min_uv[0] + slack
            and self.min_uv[1] <= other.min_uv[1] + slack
            and self.max_uv[0] >= other.max_uv[0] - slack
            and self.max_uv[1] >= other.max_uv[1] - slack
        )

    def to_list(self):
        return [self.min_uv[0], self.min_uv[1], self.max_uv[0], self.max_uv[1]]


def project_many(frame: "Frame", points: np.ndarray):
    """Project world points through a frame's pinhole camera.

    Returns (uv (N,2), z (N,)). z is the camera-frame depth along the optical
    axis; entries with z <= 0 are behind the camera and their uv is meaningless.
    """
    k = frame.intrinsics
    pose = frame.pose
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = (p - pose.translation) @ pose.rotation
    z = -cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * cam[:, 0] / z + k.cx
        v = k.fy * cam[:, 1] / z + k.cy
    return np.stack([u, v], axis=1), z


def project(frame: "Frame", world_point) -> Optional[Tuple[float, float, float]]:
    """Project a single world point; None when it lies behind the camera."""
    uv, z = project_many(frame, np.asarray(world_point, dtype=np.float64).reshape(1, 3))
    if z[0] <= 0:
        return None
    return float(uv[0, 0]), float(uv[0, 1]), float(z[0])
