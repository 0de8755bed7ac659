"""Posed-camera scene descriptions: loading, saving, scale calibration.

Supported inputs:
  - transforms-style JSON (fl_x/fl_y/cx/cy/w/h + frames with 4x4 row-major
    camera-to-world matrices, OpenGL-style axes). Per-frame intrinsics
    override the globals when present.
  - COLMAP text exports (cameras.txt + images.txt). COLMAP poses are
    world-to-camera with +Z forward / -Y up and are converted to the
    internal camera-to-world, -Z forward, +Y up convention at load time.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .geometry import project_many


class SceneParseError(ValueError):
    """Raised for malformed scene files; message carries file/line context."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world pose: rotation 3x3, translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation is not orthonormal (deviation {err:.3g})")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)


@dataclass(frozen=True)
class Frame:
    index: int
    image_path: str
    intrinsics: CameraIntrinsics
    pose: CameraPose
    sensor_depth_path: Optional[str] = None


@dataclass(frozen=True)
class SceneDescription:
    """Immutable after construction; safe to share across worker threads."""

    frames: List[Frame]
    scale: float = 1.0
    aabb: Optional[np.ndarray] = None  # (2, 3): [min, max] world bounds

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("scene needs at least one frame")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        indices = [f.index for f in self.frames]
        if len(set(indices)) != len(indices):
            raise ValueError("frame indices must be unique")
        if self.aabb is not None:
            object.__setattr__(self, "aabb", np.asarray(self.aabb, dtype=np.float64).reshape(2, 3))


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in Frobenius norm (SVD projection)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _make_pose(rotation: np.ndarray, translation: np.ndarray, context: str) -> CameraPose:
    r = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > 1e-6:
        warnings.warn(
            f"{context}: rotation deviates from orthonormal by {err:.3g}; "
            "re-orthonormalized via nearest-rotation projection"
        )
        r = nearest_rotation(r)
    return CameraPose(r, translation)


def _intrinsics_from_keys(d: dict, defaults: dict, context: str) -> CameraIntrinsics:
    vals = {}
    for key in ("fl_x", "fl_y", "cx", "cy", "w", "h"):
        if key in d:
            vals[key] = d[key]
        elif key in defaults:
            vals[key] = defaults[key]
        else:
            raise SceneParseError(f"{context}: missing intrinsics field '{key}'")
    return CameraIntrinsics(
        fx=float(vals["fl_x"]),
        fy=float(vals["fl_y"]),
        cx=float(vals["cx"]),
        cy=float(vals["cy"]),
        width=int(vals["w"]),
        height=int(vals["h"]),
    )


def _load_transforms_json(path: str) -> SceneDescription:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SceneParseError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from e
    if "frames" not in doc or not isinstance(doc["frames"], list) or not doc["frames"]:
        raise SceneParseError(f"{path}: no frames listed")

    globals_ = {k: doc[k] for k in ("fl_x", "fl_y", "cx", "cy", "w", "h") if k in doc}
    bad = [i for i, fr in enumerate(doc["frames"]) if "file_path" not in fr or "transform_matrix" not in fr]
    if bad:
        raise SceneParseError(
            f"{path}: frames missing file_path/transform_matrix at indices {bad}"
        )

    frames = []
    for i, fr in enumerate(doc["frames"]):
        m = np.asarray(fr["transform_matrix"], dtype=np.float64)
        if m.shape == (4, 4):
            m = m[:3, :]
        if m.shape != (3, 4):
            raise SceneParseError(
                f"{path}: frame {i} ('{fr['file_path']}'): transform_matrix must be 3x4 or 4x4"
            )
        intr = _intrinsics_from_keys(fr, globals_, f"{path}: frame {i}")
        pose = _make_pose(m[:, :3], m[:, 3], f"{path}: frame {i}")
        frames.append(
            Frame(
                index=i,
                image_path=str(fr["file_path"]),
                intrinsics=intr,
                pose=pose,
                sensor_depth_path=fr.get("depth_file_path"),
            )
        )

    aabb = np.asarray(doc["aabb"], dtype=np.float64) if "aabb" in doc else _default_aabb(frames)
    return SceneDescription(frames=frames, scale=float(doc.get("scale", 1.0)), aabb=aabb)


def _default_aabb(frames: List[Frame]) -> np.ndarray:
    centers = np.stack([f.pose.translation for f in frames])
    lo = centers.min(axis=0)
    hi = centers.max(axis=0)
    pad = 0.5 * max(float((hi - lo).max()), 1.0)
    return np.stack([lo - pad, hi + pad])


_COLMAP_MODELS = {"SIMPLE_PINHOLE": 3, "PINHOLE": 4, "OPENCV": 8}

# COLMAP camera axes are +Z forward / -Y up; ours are -Z forward / +Y up.
_CV_TO_GL = np.diag([1.0, -1.0, -1.0])


def _parse_colmap_cameras(path: str) -> dict:
    cameras = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                cam_id = int(parts[0])
                model = parts[1]
                width, height = int(parts[2]), int(parts[3])
                params = [float(p) for p in parts[4:]]
            except (ValueError, IndexError) as e:
                raise SceneParseError(f"{path}:{lineno}: malformed camera record") from e
            if model not in _COLMAP_MODELS:
                raise SceneParseError(
                    f"{path}:{lineno}: unsupported camera model '{model}' "
                    f"(supported: {sorted(_COLMAP_MODELS)})"
                )
            if len(params) != _COLMAP_MODELS[model]:
                raise SceneParseError(
                    f"{path}:{lineno}: model {model} expects {_COLMAP_MODELS[model]} params"
                )
            if model == "SIMPLE_PINHOLE":
                fx = fy = params[0]
                cx, cy = params[1], params[2]
            else:
                fx, fy, cx, cy = params[:4]
            if model == "OPENCV" and any(p != 0.0 for p in params[4:]):
                raise SceneParseError(
                    f"{path}:{lineno}: camera {cam_id} has nonzero distortion coefficients "
                    f"{params[4:]}; undistort the capture before ingesting"
                )
            cameras[cam_id] = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
    if not cameras:
        raise SceneParseError(f"{path}: no cameras parsed")
    return cameras


def _quat_wxyz_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def _load_colmap_text(path: str) -> SceneDescription:
    cameras_txt = os.path.join(path, "cameras.txt")
    images_txt = os.path.join(path, "images.txt")
    for p in (cameras_txt, images_txt):
        if not os.path.exists(p):
            raise SceneParseError(f"{p}: file not found")
    cameras = _parse_colmap_cameras(cameras_txt)

    records = []
    missing = []
    with open(images_txt, "r", encoding="utf-8") as f:
        lines = [(n, l.strip()) for n, l in enumerate(f, start=1)]
    content = [(n, l) for n, l in lines if l and not l.startswith("#")]
    # images.txt alternates pose lines and 2D-point lines
    for lineno, line in content[0::2]:
        parts = line.split()
        if len(parts) < 10:
            raise SceneParseError(f"{images_txt}:{lineno}: malformed image record")
        try:
            qvec = np.array([float(p) for p in parts[1:5]])
            tvec = np.array([float(p) for p in parts[5:8]])
            cam_id = int(parts[8])
        except ValueError as e:
            raise SceneParseError(f"{images_txt}:{lineno}: malformed image record") from e
        name = parts[9]
        if cam_id not in cameras:
            missing.append(f"{name} (camera {cam_id})")
            continue
        # world-to-camera -> camera-to-world, then CV -> GL axis flip
        r_w2c = _quat_wxyz_to_matrix(qvec)
        r_c2w = r_w2c.T
        center = -r_c2w @ tvec
        records.append((name, r_c2w @ _CV_TO_GL, center, cam_id, lineno))
    if missing:
        raise SceneParseError(
            f"{images_txt}: images reference unknown cameras: {', '.join(missing)}"
        )
    if not records:
        raise SceneParseError(f"{images_txt}: no images parsed")

    records.sort(key=lambda r: r[0])
    frames = []
    for i, (name, rot, center, cam_id, lineno) in enumerate(records):
        pose = _make_pose(rot, center, f"{images_txt}:{lineno}")
        frames.append(Frame(index=i, image_path=name, intrinsics=cameras[cam_id], pose=pose))
    return SceneDescription(frames=frames, scale=1.0, aabb=_default_aabb(frames))


def load_scene(path: str, format: str = "transforms-json") -> SceneDescription:
    if format == "transforms-json":
        return _load_transforms_json(path)
    if format == "colmap-text":
        return _load_colmap_text(path)
    raise ValueError(f"unknown scene format '{format}' (expected transforms-json or colmap-text)")


def save_scene(scene: SceneDescription, path: str) -> None:
    """Write a transforms-style JSON file in the internal convention."""
    frames = []
    for fr in scene.frames:
        m = np.eye(4)
        m[:3, :3] = fr.pose.rotation
        m[:3, 3] = fr.pose.translation
        entry = {
            "file_path": fr.image_path,
            "fl_x": fr.intrinsics.fx,
            "fl_y": fr.intrinsics.fy,
            "cx": fr.intrinsics.cx,
            "cy": fr.intrinsics.cy,
            "w": fr.intrinsics.width,
            "h": fr.intrinsics.height,
            "transform_matrix": m.tolist(),
        }
        if fr.sensor_depth_path is not None:
            entry["depth_file_path"] = fr.sensor_depth_path
        frames.append(entry)
    doc = {"scale": scene.scale, "frames": frames}
    if scene.aabb is not None:
        doc["aabb"] = scene.aabb.tolist()
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def calibrate_scale(
    scene: SceneDescription, p1, p2, real_distance: float
) -> SceneDescription:
    """Rescale camera translations so that |p1 - p2| maps to real_distance.

    p1/p2 are picked in the scene's current (uncalibrated) world units.
    Rotations are untouched; scene.scale accumulates the applied factor.
    """
    if real_distance <= 0:
        raise ValueError("real_distance must be positive")
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    measured = float(np.linalg.norm(p1 - p2))
    if measured == 0.0:
        raise ValueError("calibration points are coincident")
    s = real_distance / measured
    frames = [
        replace(fr, pose=CameraPose(fr.pose.rotation, fr.pose.translation * s))
        for fr in scene.frames
    ]
    aabb = scene.aabb * s if scene.aabb is not None else None
    return SceneDescription(frames=frames, scale=scene.scale * s, aabb=aabb)


def back_project(frame: Frame, pixel, z_depth: float) -> np.ndarray:
    """World point at camera-frame depth z_depth projecting to the given pixel."""
    if z_depth <= 0:
        raise ValueError("z_depth must be positive")
    u, v = float(pixel[0]), float(pixel[1])
    k = frame.intrinsics
    x = (u - k.cx) / k.fx * z_depth
    y = (v - k.cy) / k.fy * z_depth
    cam = np.array([x, y, -z_depth])
    return frame.pose.rotation @ cam + frame.pose.translation


def back_project_many(frame: Frame, uv: np.ndarray, z_depth: np.ndarray) -> np.ndarray:
    """Vectorized back_project; all depths must be positive."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    z = np.asarray(z_depth, dtype=np.float64).reshape(-1)
    k = frame.intrinsics
    cam = np.stack(
        [(uv[:, 0] - k.cx) / k.fx * z, (uv[:, 1] - k.cy) / k.fy * z, -z], axis=1
    )
    return cam @ frame.pose.rotation.T + frame.pose.translation


def frame_rays(frame: Frame):
    """Per-pixel-center viewing rays for a frame.

    Returns (origins (H*W, 3), dirs (H*W, 3) unit world vectors,
    axial (H*W,)) where axial converts ray parameter to z-depth:
    z = t * axial. Row-major pixel order, centers at (u + 0.5, v + 0.5).
    """
    k = frame.intrinsics
    u = np.arange(k.width, dtype=np.float64) + 0.5
    v = np.arange(k.height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack(
        [(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, -np.ones_like(uu)], axis=-1
    ).reshape(-1, 3)
    norms = np.sqrt(d_cam[:, 0] ** 2 + d_cam[:, 1] ** 2 + d_cam[:, 2] ** 2)
    d_cam = d_cam / norms[:, None]
    d_world = d_cam @ frame.pose.rotation.T
    origins = np.broadcast_to(frame.pose.translation, d_world.shape)
    axial = -d_cam[:, 2]
    return origins, d_world, axial


__all__ = [
    "SceneParseError",
    "CameraIntrinsics",
    "CameraPose",
    "Frame",
    "SceneDescription",
    "nearest_rotation",
    "load_scene",
    "save_scene",
    "calibrate_scale",
    "back_project",
    "back_project_many",
    "frame_rays",
    "project_many",
]
