"""HTTP service exposing the scene, renders, and label editing.

One writer, many readers: the project document moves through pure functional
updates guarded by a lock and an optimistic revision counter; render
endpoints work on immutable snapshots and never mutate session state.
"""

import io
import os
import threading
from dataclasses import dataclass, field as dc_field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import export as export_mod
from . import fields as fields_mod
from . import labeling, meshops
from .geometry import OrientedBox, RigidTransform, project_many
from .labeling import Edit, LabelProject, MeshCache
from .rasters import MaskImage
from .scene import CameraIntrinsics, Frame, SceneDescription

PREVIEW_LONG_EDGE = 640

# distinct, stable preview colors per instance id (cycled)
_PALETTE = np.array(
    [
        [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
        [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230],
        [210, 245, 60], [250, 190, 212], [0, 128, 128], [220, 190, 255],
    ],
    dtype=np.uint8,
)


class SessionState:
    """Mutable server state: immutable snapshots swapped under a lock."""

    def __init__(self, scene: SceneDescription, field, project: LabelProject,
                 mesh_cache: Optional[MeshCache] = None,
                 march_config=None, backend: Optional[str] = None,
                 project_path: Optional[str] = None):
        self.scene = scene
        self.field = field
        self.project = project
        self.mesh_cache = mesh_cache or MeshCache(".")
        self.march_config = march_config or fields_mod.RayMarchConfig.for_aabb(field.aabb)
        self.backend = backend
        self.project_path = project_path
        self.revision = 0
        self.current_frame = 0
        self.edit_log: List[Edit] = []
        self.lock = threading.Lock()

    def mutate(self, expected_revision: int, edits: List[Edit]) -> Tuple[LabelProject, int]:
        """Apply journaled edits atomically; raises on revision mismatch."""
        with self.lock:
            if expected_revision != self.revision:
                raise RevisionConflict(
                    "revision %d does not match current %d"
                    % (expected_revision, self.revision)
                )
            project = self.project
            for e in edits:
                project = labeling.apply_edit(project, e)
            self.project = project
            self.edit_log.extend(edits)
            self.revision += 1
            if self.project_path:
                labeling.save_project(project, self.project_path)
            return project, self.revision


class RevisionConflict(Exception):
    pass


def _preview_frame(frame: Frame, long_edge: int) -> Frame:
    """Frame with intrinsics scaled so the long image edge is at most long_edge."""
    k = frame.intrinsics
    s = long_edge / max(k.width, k.height)
    if s >= 1.0:
        return frame
    w = max(1, int(round(k.width * s)))
    h = max(1, int(round(k.height * s)))
    scaled = CameraIntrinsics(
        fx=k.fx * s, fy=k.fy * s, cx=k.cx * s, cy=k.cy * s, width=w, height=h
    )
    return Frame(
        index=frame.index,
        image_path=frame.image_path,
        intrinsics=scaled,
        pose=frame.pose,
        sensor_depth_path=frame.sensor_depth_path,
    )


def _png_bytes(rgb: np.ndarray, alpha: Optional[np.ndarray] = None) -> bytes:
    from PIL import Image

    if alpha is not None:
        arr = np.concatenate([rgb, alpha[..., None]], axis=-1).astype(np.uint8)
        img = Image.fromarray(arr, mode="RGBA")
    else:
        img = Image.fromarray(np.asarray(rgb, dtype=np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _depth_preview_rgb(depth_m: np.ndarray) -> np.ndarray:
    """Grayscale visualization: near bright, far dark, missing black."""
    covered = depth_m > 0
    if covered.any():
        lo = float(depth_m[covered].min())
        hi = float(depth_m[covered].max())
        span = hi - lo if hi > lo else 1.0
        g = np.where(covered, 235.0 - 200.0 * (depth_m - lo) / span, 0.0)
    else:
        g = np.zeros_like(depth_m)
    g = np.clip(g, 0, 255).astype(np.uint8)
    return np.stack([g, g, g], axis=-1)


def _instance_overlay(mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rgb = np.zeros(mask.shape + (3,), dtype=np.uint8)
    alpha = np.zeros(mask.shape, dtype=np.uint8)
    for oid in np.unique(mask):
        if oid == 0:
            continue
        color = _PALETTE[(int(oid) - 1) % len(_PALETTE)]
        sel = mask == oid
        rgb[sel] = color
        alpha[sel] = 255
    return rgb, alpha


def _render_instance_mask(state: SessionState, project: LabelProject, frame: Frame,
                          occlusion: str) -> MaskImage:
    render_meshes = [
        (o.id, export_mod.object_render_mesh(o, state.mesh_cache), o.pose)
        for o in project.objects
    ]
    mesh_depth, id_map = meshops.render_mesh_depth(render_meshes, frame, backend=state.backend)
    cfg = export_mod.OcclusionConfig(mode=occlusion)
    if occlusion == "field":
        occ = fields_mod.render_field_depth(state.field, frame, state.march_config,
                                            backend=state.backend)
    else:
        from .rasters import DepthMap

        occ = DepthMap.zeros(frame.intrinsics.height, frame.intrinsics.width)
    classes = {o.id: project.class_id(o.class_name) for o in project.objects}
    return export_mod.compose_masks(id_map, mesh_depth, occ, cfg, classes)["instance"]


def _projected_corners(box_world: OrientedBox, frame: Frame):
    uv, z = project_many(frame, box_world.corners())
    out = []
    for i in range(8):
        if z[i] <= 1e-9:
            out.append(None)
        else:
            out.append([float(uv[i, 0]), float(uv[i, 1])])
    return out


def create_app(scene: SceneDescription, field, project: LabelProject,
               mesh_cache: Optional[MeshCache] = None, march_config=None,
               backend: Optional[str] = None, project_path: Optional[str] = None,
               frontend_dir: Optional[str] = None):
    from fastapi import Body, FastAPI, HTTPException, Response

    state = SessionState(scene, field, project, mesh_cache=mesh_cache,
                         march_config=march_config, backend=backend,
                         project_path=project_path)
    app = FastAPI(title="fieldlabel service")
    app.state.session = state

    def get_frame(index: int) -> Frame:
        for f in state.scene.frames:
            if f.index == index:
                return f
        raise HTTPException(status_code=404, detail="unknown frame %d" % index)

    def current_project() -> LabelProject:
        with state.lock:
            return state.project

    def parse_pose(d: dict) -> RigidTransform:
        try:
            q = np.asarray(d["q"], dtype=np.float64).reshape(4)
            t = np.asarray(d["t"], dtype=np.float64).reshape(3)
            if not np.all(np.isfinite(q)) or not np.all(np.isfinite(t)):
                raise ValueError("pose values must be finite")
            return RigidTransform(q, t)
        except (KeyError, TypeError, ValueError) as e:
            raise HTTPException(status_code=422, detail="invalid pose: %s" % e)

    def mutate_or_conflict(revision, edits):
        try:
            return state.mutate(revision, edits)
        except RevisionConflict as e:
            raise HTTPException(status_code=409, detail=str(e))
        except labeling.LabelError as e:
            raise HTTPException(status_code=422, detail=str(e))

    @app.get("/scene")
    def get_scene():
        frames = []
        for f in state.scene.frames:
            k = f.intrinsics
            frames.append({
                "index": f.index,
                "image_path": f.image_path,
                "width": k.width,
                "height": k.height,
                "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                "pose": RigidTransform.from_matrix(f.pose.rotation, f.pose.translation).to_dict(),
                "has_sensor_depth": bool(f.sensor_depth_path),
            })
        return {
            "frames": frames,
            "scale": state.scene.scale,
            "aabb": np.asarray(state.scene.aabb, dtype=np.float64).tolist(),
        }

    @app.get("/project")
    def get_project():
        with state.lock:
            return {"revision": state.revision, "project": state.project.to_dict()}

    @app.put("/project")
    def put_project(body: dict = Body(...)):
        if "revision" not in body or "project" not in body:
            raise HTTPException(status_code=422, detail="body needs revision and project")
        try:
            new_project = labeling.LabelProject(
                scene_ref=str(body["project"].get("scene_ref", "")),
                objects=tuple(
                    labeling.LabelObject.from_dict(o)
                    for o in body["project"].get("objects", [])
                ),
                class_table={
                    str(k): int(v)
                    for k, v in body["project"].get("class_table", {}).items()
                },
            )
        except (labeling.LabelError, KeyError, TypeError, ValueError) as e:
            raise HTTPException(status_code=422, detail="invalid project: %s" % e)
        with state.lock:
            old = state.project
        edits = [labeling.edit_remove(old, o.id) for o in old.objects]
        # classes swap after removals so intermediate states stay valid
        classes_edit = Edit(
            "set_classes", 0,
            {"table": dict(new_project.class_table), "prev": dict(old.class_table)},
        )
        edits.append(classes_edit)
        edits.extend(labeling.edit_add(o) for o in new_project.objects)
        project, revision = mutate_or_conflict(int(body["revision"]), edits)
        return {"revision": revision, "project": project.to_dict()}

    @app.post("/objects")
    def post_object(body: dict = Body(...)):
        if "revision" not in body or "object" not in body:
            raise HTTPException(status_code=422, detail="body needs revision and object")
        try:
            obj = labeling.LabelObject.from_dict(body["object"])
        except (labeling.LabelError, KeyError, TypeError, ValueError) as e:
            raise HTTPException(status_code=422, detail="invalid object: %s" % e)
        project, revision = mutate_or_conflict(
            int(body["revision"]), [labeling.edit_add(obj)]
        )
        return {"revision": revision, "object": project.get(obj.id).to_dict()}

    @app.patch("/objects/{object_id}/pose")
    def patch_pose(object_id: int, body: dict = Body(...)):
        if "revision" not in body or "pose" not in body:
            raise HTTPException(status_code=422, detail="body needs revision and pose")
        pose = parse_pose(body["pose"])
        with state.lock:
            project = state.project
        if not project.has(object_id):
            raise HTTPException(status_code=404, detail="unknown object %d" % object_id)
        edit = labeling.edit_set_pose(project, object_id, pose)
        project, revision = mutate_or_conflict(int(body["revision"]), [edit])
        return {"revision": revision, "object": project.get(object_id).to_dict()}

    @app.post("/objects/{object_id}/icp")
    def post_icp(object_id: int, body: dict = Body(default={})):
        with state.lock:
            project = state.project
            revision = state.revision
        if not project.has(object_id):
            raise HTTPException(status_code=404, detail="unknown object %d" % object_id)
        expected = int(body.get("revision", revision))
        cfg_kwargs = dict(body.get("config", {}))
        try:
            cfg = labeling.IcpConfig(**cfg_kwargs)
        except TypeError as e:
            raise HTTPException(status_code=422, detail="invalid config: %s" % e)
        try:
            result = labeling.icp_refine(
                project, object_id, state.field, state.scene, cfg,
                mesh_cache=state.mesh_cache, march_config=state.march_config,
            )
        except labeling.LabelError as e:
            raise HTTPException(status_code=422, detail=str(e))
        edit = labeling.edit_set_pose(project, object_id, result.pose)
        project, revision = mutate_or_conflict(expected, [edit])
        return {
            "revision": revision,
            "object": project.get(object_id).to_dict(),
            "residual_rms": result.residual_rms,
            "iterations": result.iterations,
            "correspondence_count": result.correspondence_count,
        }

    @app.post("/objects/{object_id}/tight-fit")
    def post_tight_fit(object_id: int, body: dict = Body(default={})):
        with state.lock:
            project = state.project
            revision = state.revision
        if not project.has(object_id):
            raise HTTPException(status_code=404, detail="unknown object %d" % object_id)
        expected = int(body.get("revision", revision))
        try:
            cfg = labeling.TightFitConfig(**dict(body.get("config", {})))
        except (TypeError, ValueError) as e:
            raise HTTPException(status_code=422, detail="invalid config: %s" % e)
        try:
            box = labeling.tight_fit_box(project, object_id, state.field, cfg)
        except labeling.LabelError as e:
            raise HTTPException(status_code=422, detail=str(e))
        old = project.get(object_id)
        new_obj = replace(old, pose=box.pose, half_extents=box.half_extents)
        edits = [labeling.edit_remove(project, object_id), labeling.edit_add(new_obj)]
        project, revision = mutate_or_conflict(expected, edits)
        return {"revision": revision, "object": project.get(object_id).to_dict()}

    @app.post("/objects/{object_id}/extract-mesh")
    def post_extract(object_id: int, body: dict = Body(default={})):
        with state.lock:
            project = state.project
            revision = state.revision
        if not project.has(object_id):
            raise HTTPException(status_code=404, detail="unknown object %d" % object_id)
        obj = project.get(object_id)
        if obj.kind != labeling.KIND_BOX:
            raise HTTPException(status_code=422, detail="object %d is not a box" % object_id)
        expected = int(body.get("revision", revision))
        try:
            cfg = meshops.ExtractionConfig(**dict(body.get("config", {})))
        except (TypeError, ValueError) as e:
            raise HTTPException(status_code=422, detail="invalid config: %s" % e)
        mesh_world = meshops.extract_mesh(state.field, obj.box, cfg)
        if mesh_world.is_empty:
            raise HTTPException(status_code=422, detail="extraction produced an empty mesh")
        # store vertices in the object's frame so the existing pose carries them
        mesh_obj = meshops.TriMesh(
            obj.pose.invert().apply(mesh_world.vertices), mesh_world.triangles
        )
        out_dir = os.path.join(state.mesh_cache.base_dir, "extracted")
        os.makedirs(out_dir, exist_ok=True)
        ref = os.path.join("extracted", "object_%03d.obj" % object_id)
        meshops.save_obj(mesh_obj, state.mesh_cache.resolve_path(ref))
        new_obj = labeling.LabelObject(
            id=obj.id, class_name=obj.class_name, kind=labeling.KIND_MESH,
            pose=obj.pose, mesh_ref=ref, scale=1.0,
        )
        edits = [labeling.edit_remove(project, object_id), labeling.edit_add(new_obj)]
        project, revision = mutate_or_conflict(expected, edits)
        state.mesh_cache._cache.pop(ref, None)
        return {
            "revision": revision,
            "object": project.get(object_id).to_dict(),
            "triangle_count": mesh_obj.num_triangles,
        }

    @app.get("/frames/{index}/render")
    def render_frame(index: int, mode: str = "rgb", size: int = PREVIEW_LONG_EDGE):
        frame = _preview_frame(get_frame(index), size)
        if mode == "field_depth":
            depth = fields_mod.render_field_depth(
                state.field, frame, state.march_config, backend=state.backend
            )
            rgb = _depth_preview_rgb(depth.meters())
            return Response(content=_png_bytes(rgb), media_type="image/png")
        if mode in ("rgb", "overlay"):
            rgb = fields_mod.render_field_rgb(state.field, frame, state.march_config)
            if mode == "overlay":
                project = current_project()
                if project.objects:
                    mask = _render_instance_mask(state, project, frame, "none")
                    tint, alpha = _instance_overlay(mask.values)
                    blend = alpha[..., None].astype(np.float64) / 255.0 * 0.5
                    rgb = np.clip(
                        rgb.astype(np.float64) * (1.0 - blend) + tint.astype(np.float64) * blend,
                        0, 255,
                    ).astype(np.uint8)
            return Response(content=_png_bytes(rgb), media_type="image/png")
        raise HTTPException(status_code=422, detail="mode must be rgb, field_depth or overlay")

    @app.get("/frames/{index}/preview-masks")
    def preview_masks(index: int, occlusion: str = "none", size: int = PREVIEW_LONG_EDGE):
        if occlusion not in ("none", "field"):
            raise HTTPException(status_code=422, detail="occlusion must be none or field")
        frame = _preview_frame(get_frame(index), size)
        project = current_project()
        mask = _render_instance_mask(state, project, frame, occlusion)
        rgb, alpha = _instance_overlay(mask.values)
        return Response(content=_png_bytes(rgb, alpha), media_type="image/png")

    @app.get("/frames/{index}/annotations")
    def frame_annotations(index: int):
        frame = get_frame(index)
        project = current_project()
        objects = []
        for obj in project.objects:
            box_world = labeling.object_box(obj, mesh_cache=state.mesh_cache)
            cam = RigidTransform.from_matrix(frame.pose.rotation, frame.pose.translation)
            box_cam = OrientedBox(cam.invert().compose(box_world.pose), box_world.half_extents)
            objects.append({
                "id": obj.id,
                "class_name": obj.class_name,
                "kind": obj.kind,
                "corners_px": _projected_corners(box_world, frame),
                "box3d_cam": box_cam.to_dict(),
                "pose_cam": export_mod.export_pose(frame, obj.pose).to_dict(),
            })
        with state.lock:
            revision = state.revision
        return {"frame_index": frame.index, "revision": revision, "objects": objects}

    @app.get("/edits")
    def get_edits():
        with state.lock:
            return {
                "revision": state.revision,
                "edits": [e.to_dict() for e in state.edit_log],
            }

    if frontend_dir and os.path.isdir(frontend_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=frontend_dir, html=True), name="ui")

    return app


__all__ = ["SessionState", "RevisionConflict", "create_app", "PREVIEW_LONG_EDGE"]
