"""Per-frame ground-truth generation: occlusion-aware segmentation masks,
2D/3D boxes, camera-frame poses, depth maps, sensor-combined depth, training
patches, and the on-disk dataset layout.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import fields as fields_mod
from . import labeling, meshops
from .geometry import Box2D, OrientedBox, RigidTransform, project_many
from .labeling import KIND_BOX, LabelObject, LabelProject, MeshCache
from .meshops import TriMesh
from .rasters import MM_PER_M, DepthMap, MaskImage, atomic_write_bytes

ANNOTATION_SCHEMA_VERSION = 1

OCCLUSION_MODES = ("field", "sensor", "none")


class ExportError(ValueError):
    pass


@dataclass(frozen=True)
class OcclusionConfig:
    mode: str = "field"
    epsilon: float = 0.01  # meters

    def __post_init__(self):
        if self.mode not in OCCLUSION_MODES:
            raise ExportError("occlusion mode must be one of %s" % (OCCLUSION_MODES,))
        if self.epsilon < 0:
            raise ExportError("epsilon must be >= 0")


@dataclass(frozen=True)
class ExportConfig:
    occlusion: OcclusionConfig = dc_field(default_factory=OcclusionConfig)
    march_config: Optional[fields_mod.RayMarchConfig] = None
    backend: Optional[str] = None
    workers: int = 4


@dataclass
class FrameAnnotation:
    frame_index: int
    binary_mask: MaskImage
    instance_mask: MaskImage
    class_mask: MaskImage
    boxes2d: Dict[int, Dict[str, Optional[Box2D]]]  # id -> {modal, amodal}
    boxes3d: Dict[int, OrientedBox]  # camera frame
    poses: Dict[int, RigidTransform]  # camera frame
    depth: DepthMap
    combined_depth: Optional[DepthMap] = None


def cuboid_mesh(half_extents) -> TriMesh:
    """Closed axis-aligned cuboid centered on the origin, 12 triangles with
    outward winding. Used to rasterize box labels through the same path as
    mesh labels."""
    h = np.asarray(half_extents, dtype=np.float64).reshape(3)
    s = np.array(
        [
            [-1, -1, -1],
            [-1, -1, 1],
            [-1, 1, -1],
            [-1, 1, 1],
            [1, -1, -1],
            [1, -1, 1],
            [1, 1, -1],
            [1, 1, 1],
        ],
        dtype=np.float64,
    )
    verts = s * h
    tris = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # -x
            [4, 6, 7], [4, 7, 5],  # +x
            [0, 4, 5], [0, 5, 1],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [0, 2, 6], [0, 6, 4],  # -z
            [1, 5, 7], [1, 7, 3],  # +z
        ],
        dtype=np.int32,
    )
    return TriMesh(verts, tris)


def object_render_mesh(obj: LabelObject, mesh_cache: Optional[MeshCache]) -> TriMesh:
    """Object-frame geometry used for rendering: the referenced mesh with
    scale applied, or a synthesized cuboid for box labels."""
    if obj.kind == KIND_BOX:
        return cuboid_mesh(obj.half_extents)
    if mesh_cache is None:
        raise ExportError("mesh object %d needs a mesh cache" % obj.id)
    mesh = mesh_cache.get(obj.mesh_ref)
    return TriMesh(mesh.vertices * obj.scale, mesh.triangles)


def _check_dims(a, b, what: str):
    if a.values.shape != b.values.shape:
        raise ExportError(
            "%s dimensions %s do not match %s" % (what, b.values.shape, a.values.shape)
        )


def compose_masks(
    id_map: MaskImage,
    mesh_depth: DepthMap,
    occluder_depth: DepthMap,
    cfg: OcclusionConfig,
    object_class_ids: Dict[int, int],
) -> Dict[str, MaskImage]:
    """Visibility rule: a pixel keeps its instance id iff the id is nonzero
    and either nothing occludes (mode none, or no occluder depth there) or the
    mesh surface is not behind the occluder by more than epsilon."""
    if id_map.values.shape != mesh_depth.values.shape:
        raise ExportError("id map and mesh depth dimensions differ")
    if cfg.mode != "none" and occluder_depth.values.shape != mesh_depth.values.shape:
        raise ExportError("occluder depth dimensions differ")
    ids = id_map.values
    if cfg.mode == "none":
        visible = ids > 0
    else:
        occ = occluder_depth.values
        eps_mm = cfg.epsilon * MM_PER_M
        visible = (ids > 0) & ((occ == 0) | (mesh_depth.values <= occ + eps_mm))
    instance = np.where(visible, ids, 0).astype(ids.dtype)
    lut_size = int(ids.max()) + 1 if ids.size else 1
    lut = np.zeros(lut_size, dtype=np.uint16)
    for oid, cid in object_class_ids.items():
        if oid < lut_size:
            lut[oid] = cid
    class_mask = lut[instance]
    binary = np.where(visible, 255, 0).astype(np.uint8)
    return {
        "binary": MaskImage(binary),
        "instance": MaskImage(instance),
        "class": MaskImage(class_mask),
    }


def combine_depth(mesh_depth: DepthMap, sensor_depth: DepthMap, epsilon: float) -> DepthMap:
    """Merge rendered object depth with sensor depth.

    Where the render covers a pixel: missing sensor values are filled with the
    render, sensor readings behind the surface (beyond epsilon) are pulled
    onto it, and nearer sensor readings are kept as real occluders or noise.
    """
    _check_dims(mesh_depth, sensor_depth, "sensor depth")
    m = mesh_depth.values
    s = sensor_depth.values
    eps_mm = epsilon * MM_PER_M
    out = s.copy()
    covered = m > 0
    use_mesh = covered & ((s == 0) | (s > m - eps_mm))
    out[use_mesh] = m[use_mesh]
    return DepthMap(out)


def export_pose(frame, object_pose_world: RigidTransform) -> RigidTransform:
    """Object pose relative to the camera: inverse(camera-to-world) composed
    with object-to-world."""
    cam = RigidTransform.from_matrix(frame.pose.rotation, frame.pose.translation)
    return cam.invert().compose(object_pose_world)


def modal_bbox2d(instance_mask: MaskImage, object_id: int) -> Optional[Box2D]:
    """Tight inclusive pixel-index box over the object's visible pixels."""
    vs, us = np.nonzero(instance_mask.values == object_id)
    if len(us) == 0:
        return None
    return Box2D(
        (float(us.min()), float(vs.min())), (float(us.max()), float(vs.max()))
    )


def amodal_bbox2d(world_vertices: np.ndarray, frame) -> Optional[Box2D]:
    """Box over all projected vertices in front of the camera, clipped to the
    image; None when nothing projects."""
    uv, z = project_many(frame, world_vertices)
    front = z > 1e-9
    if not front.any():
        return None
    k = frame.intrinsics
    return Box2D.from_points(uv[front]).clipped(k.width, k.height)


def export_bbox2d(
    object_id: int,
    mode: str,
    frame,
    instance_mask: Optional[MaskImage] = None,
    world_vertices: Optional[np.ndarray] = None,
) -> Optional[Box2D]:
    if mode == "modal":
        if instance_mask is None:
            raise ExportError("modal bbox needs the instance mask")
        return modal_bbox2d(instance_mask, object_id)
    if mode == "amodal":
        if world_vertices is None:
            raise ExportError("amodal bbox needs projected vertices")
        return amodal_bbox2d(world_vertices, frame)
    raise ExportError("bbox2d mode must be 'modal' or 'amodal'")


def export_bbox3d(
    obj: LabelObject, mesh_cache: Optional[MeshCache], frame
) -> OrientedBox:
    """The object's oriented box transformed into the camera frame."""
    world_box = labeling.object_box(obj, mesh_cache=mesh_cache)
    cam = RigidTransform.from_matrix(frame.pose.rotation, frame.pose.translation)
    return OrientedBox(cam.invert().compose(world_box.pose), world_box.half_extents)


def _sensor_depth_for(frame) -> DepthMap:
    if not frame.sensor_depth_path:
        raise ExportError("frame %d has no sensor depth" % frame.index)
    if not os.path.exists(frame.sensor_depth_path):
        raise ExportError("sensor depth file missing: %s" % frame.sensor_depth_path)
    return DepthMap.load_png(frame.sensor_depth_path)


def export_frame(
    project: LabelProject,
    field,
    frame,
    cfg: ExportConfig = ExportConfig(),
    mesh_cache: Optional[MeshCache] = None,
) -> FrameAnnotation:
    """Render one frame's full annotation set."""
    render_meshes = [
        (obj.id, object_render_mesh(obj, mesh_cache), obj.pose) for obj in project.objects
    ]
    mesh_depth, id_map = meshops.render_mesh_depth(
        render_meshes, frame, backend=cfg.backend
    )

    k = frame.intrinsics
    occ_mode = cfg.occlusion.mode
    if occ_mode == "field":
        march = cfg.march_config
        if march is None:
            march = fields_mod.RayMarchConfig.for_aabb(field.aabb)
        occluder = fields_mod.render_field_depth(field, frame, march, backend=cfg.backend)
    elif occ_mode == "sensor":
        occluder = _sensor_depth_for(frame)
    else:
        occluder = DepthMap.zeros(k.height, k.width)

    object_class_ids = {o.id: project.class_id(o.class_name) for o in project.objects}
    masks = compose_masks(id_map, mesh_depth, occluder, cfg.occlusion, object_class_ids)

    combined = None
    if frame.sensor_depth_path:
        combined = combine_depth(mesh_depth, _sensor_depth_for(frame), cfg.occlusion.epsilon)

    boxes2d: Dict[int, Dict[str, Optional[Box2D]]] = {}
    boxes3d: Dict[int, OrientedBox] = {}
    poses: Dict[int, RigidTransform] = {}
    for obj, (_, render_mesh, _) in zip(project.objects, render_meshes):
        world_verts = obj.pose.apply(render_mesh.vertices)
        boxes2d[obj.id] = {
            "modal": modal_bbox2d(masks["instance"], obj.id),
            "amodal": amodal_bbox2d(world_verts, frame),
        }
        boxes3d[obj.id] = export_bbox3d(obj, mesh_cache, frame)
        poses[obj.id] = export_pose(frame, obj.pose)

    return FrameAnnotation(
        frame_index=frame.index,
        binary_mask=masks["binary"],
        instance_mask=masks["instance"],
        class_mask=masks["class"],
        boxes2d=boxes2d,
        boxes3d=boxes3d,
        poses=poses,
        depth=mesh_depth,
        combined_depth=combined,
    )


def _box2d_json(b: Optional[Box2D]):
    return None if b is None else b.to_list()


def annotation_to_json(ann: FrameAnnotation) -> dict:
    return {
        "schema_version": ANNOTATION_SCHEMA_VERSION,
        "frame_index": ann.frame_index,
        "boxes2d": {
            str(oid): {"modal": _box2d_json(bb["modal"]), "amodal": _box2d_json(bb["amodal"])}
            for oid, bb in ann.boxes2d.items()
        },
        "boxes3d": {str(oid): box.to_dict() for oid, box in ann.boxes3d.items()},
        "poses": {str(oid): pose.to_dict() for oid, pose in ann.poses.items()},
    }


def export_scene(
    project: LabelProject,
    field,
    scene,
    cfg: ExportConfig,
    out_dir: str,
    mesh_cache: Optional[MeshCache] = None,
) -> None:
    """Write the full dataset layout for every frame of the scene.

    Frames render in parallel; every file is written atomically, and repeated
    runs produce byte-identical trees."""
    subdirs = ["depth", "mask_binary", "mask_instance", "mask_class", "annotations", "meshes"]
    have_sensor = any(f.sensor_depth_path for f in scene.frames)
    if have_sensor:
        subdirs.append("combined_depth")
    for d in subdirs:
        os.makedirs(os.path.join(out_dir, d), exist_ok=True)

    classes = {
        "schema_version": ANNOTATION_SCHEMA_VERSION,
        "classes": dict(project.class_table),
    }
    atomic_write_bytes(
        os.path.join(out_dir, "classes.json"),
        (json.dumps(classes, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )
    for obj in project.objects:
        mesh = object_render_mesh(obj, mesh_cache)
        meshops.save_obj(mesh, os.path.join(out_dir, "meshes", "object_%03d.obj" % obj.id))

    def run(frame):
        ann = export_frame(project, field, frame, cfg, mesh_cache)
        name = "%06d" % frame.index
        ann.depth.save_png(os.path.join(out_dir, "depth", name + ".png"))
        ann.binary_mask.save_png(os.path.join(out_dir, "mask_binary", name + ".png"))
        ann.instance_mask.save_png(os.path.join(out_dir, "mask_instance", name + ".png"))
        ann.class_mask.save_png(os.path.join(out_dir, "mask_class", name + ".png"))
        if ann.combined_depth is not None:
            ann.combined_depth.save_png(os.path.join(out_dir, "combined_depth", name + ".png"))
        payload = json.dumps(annotation_to_json(ann), indent=2, sort_keys=True) + "\n"
        atomic_write_bytes(
            os.path.join(out_dir, "annotations", name + ".json"), payload.encode("utf-8")
        )

    workers = max(1, cfg.workers)
    if workers == 1 or len(scene.frames) <= 1:
        for frame in scene.frames:
            run(frame)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, scene.frames))


# ---------------------------------------------------------------------------
# Training patches

PATCH_SIZE = 512
DEPTH_CLIP_MM = (450.0, 2000.0)


def normalize_depth_mm(d: np.ndarray) -> np.ndarray:
    lo, hi = DEPTH_CLIP_MM
    c = np.clip(d, lo, hi)
    return (c - lo) / (hi - lo) * 2.0 - 1.0


def denormalize_depth_mm(n: np.ndarray) -> np.ndarray:
    lo, hi = DEPTH_CLIP_MM
    return (np.asarray(n) + 1.0) / 2.0 * (hi - lo) + lo


def nearest_index_map(out_size: int, in_size: int) -> np.ndarray:
    """Source index per output index for nearest-neighbor resampling."""
    return (np.arange(out_size) * in_size) // out_size


def prepare_training_patch(
    color: Optional[np.ndarray],
    depth: DepthMap,
    mode: str = "center",
    seed: int = 0,
    out_size: int = PATCH_SIZE,
) -> Tuple[Optional[np.ndarray], np.ndarray]:
    """Square crop + nearest-neighbor resize + per-channel [-1, 1] mapping.

    color is (H, W, 3) uint8 in [0, 255] or None; depth is the matching
    DepthMap. The crop is horizontal only: center mode takes the middle
    columns, random mode draws the offset from the seed."""
    h, w = depth.values.shape
    if w < h:
        raise ExportError("width %d is smaller than height %d" % (w, h))
    if color is not None:
        if color.shape[:2] != (h, w):
            raise ExportError("color and depth dimensions differ")
    if mode == "center":
        x0 = (w - h) // 2
    elif mode == "random":
        rng = np.random.default_rng(seed)
        x0 = int(rng.integers(0, w - h + 1))
    else:
        raise ExportError("mode must be 'center' or 'random'")

    idx = nearest_index_map(out_size, h)
    rows = idx
    cols = x0 + idx
    depth_patch = normalize_depth_mm(depth.values[np.ix_(rows, cols)])
    color_patch = None
    if color is not None:
        color_patch = color[np.ix_(rows, cols)].astype(np.float64) / 255.0 * 2.0 - 1.0
    return color_patch, depth_patch


__all__ = [
    "ExportError",
    "OcclusionConfig",
    "ExportConfig",
    "FrameAnnotation",
    "cuboid_mesh",
    "object_render_mesh",
    "compose_masks",
    "combine_depth",
    "export_pose",
    "modal_bbox2d",
    "amodal_bbox2d",
    "export_bbox2d",
    "export_bbox3d",
    "export_frame",
    "export_scene",
    "annotation_to_json",
    "normalize_depth_mm",
    "denormalize_depth_mm",
    "nearest_index_map",
    "prepare_training_patch",
    "PATCH_SIZE",
    "DEPTH_CLIP_MM",
]
