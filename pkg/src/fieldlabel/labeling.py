"""The annotation document: box and mesh labels, the append-only edit
journal, ICP pose refinement, and tight-fit box shrinking.

All project mutations are pure functional updates expressed as Edit records,
so an edit log replays to the exact final state and every edit has a cheap
inverse.
"""

import json
import os
from dataclasses import dataclass, field as dc_field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    OrientedBox,
    RigidTransform,
    quat_multiply,
    quat_normalize,
)
from . import meshops
from .meshops import TriMesh
from .scene import back_project_many
from . import fields as fields_mod

PROJECT_SCHEMA_VERSION = 1
_SUPPORTED_SCHEMAS = (1,)

KIND_BOX = "box"
KIND_MESH = "mesh"


class LabelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LabelObject:
    id: int
    class_name: str
    kind: str
    pose: RigidTransform
    half_extents: Optional[np.ndarray] = None  # kind=box
    mesh_ref: Optional[str] = None  # kind=mesh
    scale: float = 1.0

    def __eq__(self, other):
        if not isinstance(other, LabelObject):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __post_init__(self):
        if self.id <= 0:
            raise LabelError("object id must be a positive integer")
        if self.kind not in (KIND_BOX, KIND_MESH):
            raise LabelError("kind must be 'box' or 'mesh', got %r" % self.kind)
        if self.scale <= 0:
            raise LabelError("scale must be positive")
        if self.kind == KIND_BOX:
            if self.half_extents is None:
                raise LabelError("box object %d needs half_extents" % self.id)
            he = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
            if (he <= 0).any():
                raise LabelError("half_extents must be positive")
            object.__setattr__(self, "half_extents", he)
        else:
            if not self.mesh_ref:
                raise LabelError("mesh object %d needs mesh_ref" % self.id)

    @property
    def box(self) -> OrientedBox:
        if self.kind != KIND_BOX:
            raise LabelError("object %d is not a box" % self.id)
        return OrientedBox(self.pose, self.half_extents)

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "class_name": self.class_name,
            "kind": self.kind,
            "pose": self.pose.to_dict(),
            "scale": self.scale,
        }
        if self.kind == KIND_BOX:
            d["half_extents"] = [float(x) for x in self.half_extents]
        else:
            d["mesh_ref"] = self.mesh_ref
        return d

    @staticmethod
    def from_dict(d: dict) -> "LabelObject":
        he = d.get("half_extents")
        return LabelObject(
            id=int(d["id"]),
            class_name=str(d["class_name"]),
            kind=str(d["kind"]),
            pose=RigidTransform.from_dict(d["pose"]),
            half_extents=None if he is None else np.asarray(he, dtype=np.float64),
            mesh_ref=d.get("mesh_ref"),
            scale=float(d.get("scale", 1.0)),
        )


def _check_class_table(table: Dict[str, int]) -> None:
    ids = sorted(table.values())
    if ids != list(range(1, len(ids) + 1)):
        raise LabelError("class ids must be dense starting at 1, got %s" % ids)


@dataclass(frozen=True)
class LabelProject:
    scene_ref: str
    objects: Tuple[LabelObject, ...] = ()
    class_table: Dict[str, int] = dc_field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise LabelError("duplicate object ids: %s" % dupes)
        _check_class_table(self.class_table)
        for o in self.objects:
            if o.class_name not in self.class_table:
                raise LabelError(
                    "object %d has unregistered class %r" % (o.id, o.class_name)
                )

    def get(self, object_id: int) -> LabelObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise LabelError("unknown object id %d" % object_id)

    def has(self, object_id: int) -> bool:
        return any(o.id == object_id for o in self.objects)

    def class_id(self, class_name: str) -> int:
        return self.class_table[class_name]

    def to_dict(self) -> dict:
        return {
            "schema_version": PROJECT_SCHEMA_VERSION,
            "scene_ref": self.scene_ref,
            "class_table": dict(self.class_table),
            "objects": [o.to_dict() for o in self.objects],
        }


def _replace_object(project: LabelProject, obj: LabelObject) -> LabelProject:
    objs = tuple(obj if o.id == obj.id else o for o in project.objects)
    return replace(project, objects=objs)


# ---------------------------------------------------------------------------
# Edit journal

@dataclass(frozen=True)
class Edit:
    """One journaled project mutation. Payloads are snapshot-complete, so an
    edit can be inverted without consulting any project state."""

    kind: str  # add | remove | translate | rotate | scale | set_pose
    object_id: int
    payload: dict

    def to_dict(self) -> dict:
        return {"kind": self.kind, "object_id": self.object_id, "payload": self.payload}

    @staticmethod
    def from_dict(d: dict) -> "Edit":
        return Edit(str(d["kind"]), int(d["object_id"]), dict(d["payload"]))


def edit_add(obj: LabelObject) -> Edit:
    return Edit("add", obj.id, {"object": obj.to_dict()})


def edit_remove(project: LabelProject, object_id: int) -> Edit:
    return Edit("remove", object_id, {"object": project.get(object_id).to_dict()})


def edit_translate(object_id: int, delta) -> Edit:
    d = np.asarray(delta, dtype=np.float64).reshape(3)
    return Edit("translate", object_id, {"delta": d.tolist()})


def edit_rotate(object_id: int, dq) -> Edit:
    q = quat_normalize(np.asarray(dq, dtype=np.float64).reshape(4))
    return Edit("rotate", object_id, {"dq": q.tolist()})


def edit_scale(object_id: int, factor: float) -> Edit:
    if factor <= 0:
        raise LabelError("scale factor must be positive")
    return Edit("scale", object_id, {"factor": float(factor)})


def edit_set_pose(project: LabelProject, object_id: int, pose: RigidTransform) -> Edit:
    prev = project.get(object_id).pose
    return Edit("set_pose", object_id, {"pose": pose.to_dict(), "prev": prev.to_dict()})


def edit_set_classes(project: LabelProject, table: Dict[str, int]) -> Edit:
    _check_class_table(table)
    return Edit(
        "set_classes", 0, {"table": dict(table), "prev": dict(project.class_table)}
    )


def apply_edit(project: LabelProject, edit: Edit) -> LabelProject:
    if edit.kind == "add":
        obj = LabelObject.from_dict(edit.payload["object"])
        if project.has(obj.id):
            raise LabelError("object id %d already exists" % obj.id)
        table = dict(project.class_table)
        if obj.class_name not in table:
            table[obj.class_name] = len(table) + 1
        return replace(project, objects=project.objects + (obj,), class_table=table)
    if edit.kind == "remove":
        project.get(edit.object_id)
        objs = tuple(o for o in project.objects if o.id != edit.object_id)
        return replace(project, objects=objs)
    if edit.kind == "set_classes":
        table = {str(k): int(v) for k, v in edit.payload["table"].items()}
        return replace(project, class_table=table)
    obj = project.get(edit.object_id)
    if edit.kind == "translate":
        d = np.asarray(edit.payload["delta"], dtype=np.float64)
        pose = RigidTransform(obj.pose.quaternion, obj.pose.translation + d)
        return _replace_object(project, replace(obj, pose=pose))
    if edit.kind == "rotate":
        # rotate about the object's own center: translation unchanged
        dq = np.asarray(edit.payload["dq"], dtype=np.float64)
        pose = RigidTransform(quat_multiply(dq, obj.pose.quaternion), obj.pose.translation)
        return _replace_object(project, replace(obj, pose=pose))
    if edit.kind == "scale":
        f = float(edit.payload["factor"])
        if f <= 0:
            raise LabelError("scale factor must be positive")
        if obj.kind == KIND_BOX:
            return _replace_object(project, replace(obj, half_extents=obj.half_extents * f))
        return _replace_object(project, replace(obj, scale=obj.scale * f))
    if edit.kind == "set_pose":
        pose = RigidTransform.from_dict(edit.payload["pose"])
        return _replace_object(project, replace(obj, pose=pose))
    raise LabelError("unknown edit kind %r" % edit.kind)


def invert_edit(edit: Edit) -> Edit:
    if edit.kind == "add":
        return Edit("remove", edit.object_id, dict(edit.payload))
    if edit.kind == "remove":
        return Edit("add", edit.object_id, dict(edit.payload))
    if edit.kind == "translate":
        d = np.asarray(edit.payload["delta"], dtype=np.float64)
        return Edit("translate", edit.object_id, {"delta": (-d).tolist()})
    if edit.kind == "rotate":
        w, x, y, z = edit.payload["dq"]
        return Edit("rotate", edit.object_id, {"dq": [w, -x, -y, -z]})
    if edit.kind == "scale":
        return Edit("scale", edit.object_id, {"factor": 1.0 / edit.payload["factor"]})
    if edit.kind == "set_pose":
        return Edit(
            "set_pose",
            edit.object_id,
            {"pose": edit.payload["prev"], "prev": edit.payload["pose"]},
        )
    if edit.kind == "set_classes":
        return Edit(
            "set_classes",
            0,
            {"table": dict(edit.payload["prev"]), "prev": dict(edit.payload["table"])},
        )
    raise LabelError("unknown edit kind %r" % edit.kind)


def replay(initial: LabelProject, edits: Sequence[Edit]) -> LabelProject:
    project = initial
    for e in edits:
        project = apply_edit(project, e)
    return project


# convenience wrappers over the journal primitives

def add_object(project: LabelProject, obj: LabelObject) -> LabelProject:
    return apply_edit(project, edit_add(obj))


def remove_object(project: LabelProject, object_id: int) -> LabelProject:
    return apply_edit(project, edit_remove(project, object_id))


def translate_object(project: LabelProject, object_id: int, delta) -> LabelProject:
    return apply_edit(project, edit_translate(object_id, delta))


def rotate_object(project: LabelProject, object_id: int, dq) -> LabelProject:
    return apply_edit(project, edit_rotate(object_id, dq))


def scale_object(project: LabelProject, object_id: int, factor: float) -> LabelProject:
    return apply_edit(project, edit_scale(object_id, factor))


def set_object_pose(project: LabelProject, object_id: int, pose: RigidTransform) -> LabelProject:
    return apply_edit(project, edit_set_pose(project, object_id, pose))


# ---------------------------------------------------------------------------
# Project file IO

def save_project(project: LabelProject, path) -> None:
    from .rasters import atomic_write_bytes

    data = json.dumps(project.to_dict(), indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(path, data.encode("utf-8"))


def load_project(path) -> LabelProject:
    with open(path, "r") as fh:
        d = json.load(fh)
    version = d.get("schema_version")
    if version not in _SUPPORTED_SCHEMAS:
        raise LabelError(
            "unsupported project schema version %r; supported: %s"
            % (version, ", ".join(str(v) for v in _SUPPORTED_SCHEMAS))
        )
    objects = [LabelObject.from_dict(o) for o in d.get("objects", [])]
    return LabelProject(
        scene_ref=str(d.get("scene_ref", "")),
        objects=tuple(objects),
        class_table={str(k): int(v) for k, v in d.get("class_table", {}).items()},
    )


class MeshCache:
    """Loads and caches meshes referenced by mesh_ref paths.

    Relative refs resolve against base_dir (usually the project file's
    directory)."""

    def __init__(self, base_dir: str = "."):
        self.base_dir = base_dir
        self._cache: Dict[str, TriMesh] = {}

    def resolve_path(self, ref: str) -> str:
        if os.path.isabs(ref):
            return ref
        return os.path.join(self.base_dir, ref)

    def get(self, ref: str) -> TriMesh:
        if ref not in self._cache:
            path = self.resolve_path(ref)
            if not os.path.exists(path):
                raise LabelError("mesh file not found: %s" % path)
            self._cache[ref] = meshops.load_obj(path)
        return self._cache[ref]


def object_box(obj: LabelObject, mesh_cache: Optional[MeshCache] = None,
               mesh: Optional[TriMesh] = None) -> OrientedBox:
    """World-frame OBB of a labeled object.

    Boxes carry their own extents; for meshes the object-frame AABB of the
    scaled mesh rides on the object pose."""
    if obj.kind == KIND_BOX:
        return obj.box
    if mesh is None:
        if mesh_cache is None:
            raise LabelError("mesh object %d needs a mesh cache" % obj.id)
        mesh = mesh_cache.get(obj.mesh_ref)
    lo, hi = mesh.aabb()
    lo = lo * obj.scale
    hi = hi * obj.scale
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    pose = obj.pose.compose(RigidTransform(translation=center))
    return OrientedBox(pose, np.maximum(half, 1e-12))


# ---------------------------------------------------------------------------
# ICP

@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    convergence_eps: float = 1e-6  # meters, RMS change
    max_correspondence_dist: float = 0.05  # meters
    sample_count: int = 5000
    seed: int = 0


@dataclass(frozen=True)
class IcpResult:
    pose: RigidTransform
    residual_rms: float
    iterations: int
    correspondence_count: int
    residual_history: Tuple[float, ...] = ()


def rigid_align_svd(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Closed-form rigid transform mapping source points onto target points.

    Centroid subtraction, cross-covariance, SVD, with the determinant guard
    that flips the smallest singular direction when the raw solution would be
    a reflection."""
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape or len(src) < 3:
        raise LabelError("need matching point sets of at least 3 points")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = cd - r @ cs
    return RigidTransform.from_matrix(r, t)


def icp_point_to_point(
    source_points: np.ndarray,
    target_points: np.ndarray,
    initial_pose: RigidTransform,
    cfg: IcpConfig = IcpConfig(),
) -> IcpResult:
    """Point-to-point ICP core: source_points are in object frame, the result
    pose maps object frame to world so the posed source best matches target."""
    src_obj = np.asarray(source_points, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target_points, dtype=np.float64).reshape(-1, 3)
    if len(target) == 0:
        raise LabelError("insufficient overlap: empty target cloud")
    tree = cKDTree(target)
    pose = initial_pose
    history: List[float] = []
    prev_rms = None
    n_valid = 0
    for it in range(cfg.max_iterations):
        src_world = pose.apply(src_obj)
        dist, idx = tree.query(src_world, distance_upper_bound=cfg.max_correspondence_dist)
        valid = np.isfinite(dist)
        n_valid = int(valid.sum())
        if n_valid < 10:
            raise LabelError(
                "insufficient overlap: %d correspondences within %.3f m"
                % (n_valid, cfg.max_correspondence_dist)
            )
        rms = float(np.sqrt(np.mean(dist[valid] ** 2)))
        history.append(rms)
        delta = rigid_align_svd(src_world[valid], target[idx[valid]])
        pose = delta.compose(pose)
        if prev_rms is not None and abs(prev_rms - rms) < cfg.convergence_eps:
            break
        prev_rms = rms
    return IcpResult(
        pose=pose,
        residual_rms=history[-1],
        iterations=len(history),
        correspondence_count=n_valid,
        residual_history=tuple(history),
    )


def build_icp_target(
    field,
    scene,
    box: OrientedBox,
    march_config=None,
    inflate: float = 1.2,
) -> np.ndarray:
    """Back-projected field-depth pixels from every frame, kept when inside
    the given box inflated by the given factor."""
    if march_config is None:
        march_config = fields_mod.RayMarchConfig.for_aabb(field.aabb)
    keep_box = box.inflated(inflate)
    clouds = []
    for frame in scene.frames:
        depth = fields_mod.render_field_depth(field, frame, march_config)
        z = depth.meters()
        vs, us = np.nonzero(z > 0)
        if len(us) == 0:
            continue
        uv = np.stack([us + 0.5, vs + 0.5], axis=1)
        pts = back_project_many(frame, uv, z[vs, us])
        inside = keep_box.contains(pts)
        if inside.any():
            clouds.append(pts[inside])
    if not clouds:
        return np.zeros((0, 3))
    return np.concatenate(clouds, axis=0)


def icp_refine(
    project: LabelProject,
    object_id: int,
    field,
    scene,
    cfg: IcpConfig = IcpConfig(),
    mesh_cache: Optional[MeshCache] = None,
    march_config=None,
) -> IcpResult:
    """Refine a mesh object's pose against the scene's field geometry."""
    obj = project.get(object_id)
    if obj.kind != KIND_MESH:
        raise LabelError("ICP requires a mesh object, %d is a box" % object_id)
    if mesh_cache is None:
        mesh_cache = MeshCache(".")
    mesh = mesh_cache.get(obj.mesh_ref)
    target = build_icp_target(
        field, scene, object_box(obj, mesh=mesh), march_config=march_config
    )
    scaled = TriMesh(mesh.vertices * obj.scale, mesh.triangles)
    source = meshops.sample_surface(scaled, cfg.sample_count, seed=cfg.seed)
    return icp_point_to_point(source, target, obj.pose, cfg)


# ---------------------------------------------------------------------------
# Tight-fit box

@dataclass(frozen=True)
class TightFitConfig:
    sigma_threshold: float = 15.0
    padding_cells: float = 1.0
    resolution: int = 64

    def __post_init__(self):
        if self.sigma_threshold <= 0:
            raise ValueError("sigma_threshold must be positive")
        if self.padding_cells < 0:
            raise ValueError("padding_cells must be >= 0")
        if self.resolution < 4:
            raise ValueError("resolution must be >= 4")


def tight_fit_box(
    project: LabelProject, object_id: int, field, cfg: TightFitConfig = TightFitConfig()
) -> OrientedBox:
    """Shrink a box object's extents to the occupied density slab per axis.

    Orientation is kept; each face moves inward to the outermost lattice cell
    containing density above threshold, plus padding. The box never grows."""
    obj = project.get(object_id)
    if obj.kind != KIND_BOX:
        raise LabelError("tight fit requires a box object, %d is a mesh" % object_id)
    box = obj.box
    r = cfg.resolution
    h = box.half_extents
    cell = 2.0 * h / r
    axes = [(-h[a] + (np.arange(r) + 0.5) * cell[a]) for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts_box = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    sigma = field.sample_sigma(box.pose.apply(pts_box)).reshape(r, r, r)
    occupied = sigma > cfg.sigma_threshold
    if not occupied.any():
        raise LabelError("box contains no geometry above threshold %g" % cfg.sigma_threshold)

    lo = np.empty(3)
    hi = np.empty(3)
    for a in range(3):
        other = tuple(i for i in range(3) if i != a)
        line = occupied.any(axis=other)
        idx = np.nonzero(line)[0]
        lo[a] = -h[a] + idx[0] * cell[a] - cfg.padding_cells * cell[a]
        hi[a] = -h[a] + (idx[-1] + 1) * cell[a] + cfg.padding_cells * cell[a]
    lo = np.maximum(lo, -h)
    hi = np.minimum(hi, h)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    pose = box.pose.compose(RigidTransform(translation=center))
    return OrientedBox(pose, half)


__all__ = [
    "LabelError",
    "LabelObject",
    "LabelProject",
    "Edit",
    "edit_add",
    "edit_remove",
    "edit_translate",
    "edit_rotate",
    "edit_scale",
    "edit_set_pose",
    "edit_set_classes",
    "apply_edit",
    "invert_edit",
    "replay",
    "add_object",
    "remove_object",
    "translate_object",
    "rotate_object",
    "scale_object",
    "set_object_pose",
    "save_project",
    "load_project",
    "MeshCache",
    "object_box",
    "IcpConfig",
    "IcpResult",
    "rigid_align_svd",
    "icp_point_to_point",
    "build_icp_target",
    "icp_refine",
    "TightFitConfig",
    "tight_fit_box",
    "PROJECT_SCHEMA_VERSION",
]
