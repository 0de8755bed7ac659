import numpy as np
import pytest

from fieldlabel import fields, geometry, scene
from fieldlabel.geometry import RigidTransform


def make_intrinsics(width=64, height=64, fx=80.0, fy=80.0, cx=None, cy=None):
    if cx is None:
        cx = width / 2.0
    if cy is None:
        cy = height / 2.0
    return scene.CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)


def make_frame(index=0, position=(0.0, 0.0, 2.0), look_at=(0.0, 0.0, 0.0), **intr):
    """Camera at position, -Z axis pointing at look_at, +Y up-ish."""
    c = np.asarray(position, dtype=np.float64)
    target = np.asarray(look_at, dtype=np.float64)
    back = c - target
    back = back / np.linalg.norm(back)  # camera +Z (looks down -Z)
    up = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(up, back)) > 0.99:
        up = np.array([0.0, 0.0, 1.0])
    x = np.cross(up, back)
    x = x / np.linalg.norm(x)
    y = np.cross(back, x)
    r = np.stack([x, y, back], axis=1)
    pose = scene.CameraPose(rotation=r, translation=c)
    return scene.Frame(
        index=index,
        image_path="frame_%04d.png" % index,
        intrinsics=make_intrinsics(**intr),
        pose=pose,
    )


def ring_scene(n_frames=3, radius=1.6, elevation=0.25, aabb_half=0.7, **intr):
    frames = []
    for i in range(n_frames):
        ang = 2.0 * np.pi * i / n_frames
        pos = (radius * np.cos(ang), elevation, radius * np.sin(ang))
        frames.append(make_frame(index=i, position=pos, **intr))
    aabb = np.array([[-aabb_half] * 3, [aabb_half] * 3])
    return scene.SceneDescription(frames=tuple(frames), scale=1.0, aabb=aabb)


@pytest.fixture
def sphere_field():
    return fields.AnalyticField(
        [fields.SpherePrimitive(center=(0.0, 0.0, 0.0), radius=0.3, sigma_inside=50.0)]
    )


@pytest.fixture
def identity_frame():
    pose = scene.CameraPose(rotation=np.eye(3), translation=np.zeros(3))
    return scene.Frame(
        index=0, image_path="f.png", intrinsics=make_intrinsics(), pose=pose
    )
