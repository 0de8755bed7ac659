"""Triangle meshes: OBJ IO, iso-surface extraction inside an oriented box,
depth rendering via ray casting, and surface sampling.

Mesh depth rendering has two code paths, a vectorized numpy fallback and a
compiled BVH kernel, selected through the backend machinery. Both evaluate
the same inclusive Moller-Trumbore formula with identical operand order, so
their outputs are bit-identical.
"""

import os
from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from skimage import measure

from . import _native
from .geometry import OrientedBox, RigidTransform
from .rasters import DepthMap, MaskImage


class MeshError(ValueError):
    pass


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64, meters
    triangles: np.ndarray  # (T, 3) int32
    normals: Optional[np.ndarray] = None  # (V, 3) float64 or None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(
            np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        )
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape[0] != self.vertices.shape[0]:
                raise MeshError("normal count does not match vertex count")
        if self.triangles.size:
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise MeshError("triangle index out of range")

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def is_empty(self) -> bool:
        return self.num_triangles == 0

    @staticmethod
    def empty() -> "TriMesh":
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))

    def transformed(self, pose: RigidTransform, scale: float = 1.0) -> "TriMesh":
        """New mesh with vertices mapped through scale then pose."""
        v = pose.apply(self.vertices * float(scale))
        n = None
        if self.normals is not None:
            n = self.normals @ pose.rotation_matrix.T
        return TriMesh(v, self.triangles.copy(), n)

    def aabb(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.num_vertices == 0:
            z = np.zeros(3)
            return z, z
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass(frozen=True)
class ExtractionConfig:
    resolution: int = 128
    sigma_threshold: float = 15.0
    min_component_size: int = 50

    def __post_init__(self):
        if self.resolution < 8:
            raise ValueError("resolution must be >= 8")
        if self.sigma_threshold <= 0:
            raise ValueError("sigma_threshold must be positive")
        if self.min_component_size < 0:
            raise ValueError("min_component_size must be >= 0")


def _connected_components(num_vertices: int, triangles: np.ndarray) -> np.ndarray:
    """Component label per triangle, via union-find over shared vertices."""
    parent = np.arange(num_vertices)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for a, b, c in triangles:
        ra, rb, rc = find(a), find(b), find(c)
        parent[rb] = ra
        parent[find(rc)] = ra
    tri_root = np.array([find(t) for t in triangles[:, 0]])
    _, labels = np.unique(tri_root, return_inverse=True)
    return labels


def extract_mesh(field, box: OrientedBox, cfg: ExtractionConfig) -> TriMesh:
    """Iso-surface of the field's density at cfg.sigma_threshold, cropped to box.

    Density is sampled on a resolution^3 cell-centered lattice in box frame and
    padded with one zero layer per side, so the surface closes at the box faces
    and nothing outside the box contributes. Vertices are returned in world
    frame. An empty field (no iso crossing) yields an empty mesh.
    """
    r = cfg.resolution
    h = box.half_extents
    cell = 2.0 * h / r
    axes = [(-h[a] + (np.arange(r) + 0.5) * cell[a]) for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts_box = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    sigma = field.sample_sigma(box.pose.apply(pts_box)).reshape(r, r, r)

    vol = np.zeros((r + 2, r + 2, r + 2))
    vol[1:-1, 1:-1, 1:-1] = sigma
    if vol.max() <= cfg.sigma_threshold:
        return TriMesh.empty()

    verts, faces, vnorm, _ = measure.marching_cubes(
        vol, level=cfg.sigma_threshold, spacing=tuple(cell), allow_degenerate=False
    )
    # padded lattice index j sits at box coordinate j*cell - h - 0.5*cell
    verts_box = verts - h - 0.5 * cell
    faces = faces.astype(np.int32)

    # drop residual zero-area triangles
    a = verts_box[faces[:, 0]]
    b = verts_box[faces[:, 1]]
    c = verts_box[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    faces = faces[areas > 0.0]
    if len(faces) == 0:
        return TriMesh.empty()

    if cfg.min_component_size > 0:
        labels = _connected_components(len(verts_box), faces)
        counts = np.bincount(labels)
        faces = faces[counts[labels] >= cfg.min_component_size]
        if len(faces) == 0:
            return TriMesh.empty()

    used = np.unique(faces)
    remap = np.full(len(verts_box), -1, dtype=np.int32)
    remap[used] = np.arange(len(used), dtype=np.int32)
    verts_world = box.pose.apply(verts_box[used])
    norm_world = vnorm[used] @ box.pose.rotation_matrix.T
    return TriMesh(verts_world, remap[faces], norm_world)


def is_closed(mesh: TriMesh) -> bool:
    """True when every undirected edge is shared by exactly two triangles."""
    if mesh.is_empty:
        return False
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool((counts == 2).all())


# ---------------------------------------------------------------------------
# Wavefront OBJ

def load_obj(path) -> TriMesh:
    """Parse v/vn/f records; other record types are ignored.

    Faces with more than three vertices are fan-triangulated; negative indices
    resolve relative to the vertex count at the point of use.
    """
    verts: List[Tuple[float, float, float]] = []
    norms: List[Tuple[float, float, float]] = []
    tris: List[Tuple[int, int, int]] = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError("%s:%d: vertex needs 3 coordinates" % (path, lineno))
                try:
                    verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError:
                    raise MeshError("%s:%d: bad vertex coordinate" % (path, lineno))
            elif tag == "vn":
                if len(parts) < 4:
                    raise MeshError("%s:%d: normal needs 3 components" % (path, lineno))
                try:
                    norms.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError:
                    raise MeshError("%s:%d: bad normal component" % (path, lineno))
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshError("%s:%d: face needs at least 3 vertices" % (path, lineno))
                idx = []
                for token in parts[1:]:
                    vtok = token.split("/")[0]
                    try:
                        i = int(vtok)
                    except ValueError:
                        raise MeshError("%s:%d: bad face index %r" % (path, lineno, token))
                    if i < 0:
                        i = len(verts) + i
                    elif i > 0:
                        i = i - 1
                    else:
                        raise MeshError("%s:%d: face index 0 is invalid" % (path, lineno))
                    if i < 0 or i >= len(verts):
                        raise MeshError(
                            "%s:%d: face index %s out of range" % (path, lineno, token)
                        )
                    idx.append(i)
                for k in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[k], idx[k + 1]))
    normals = None
    if norms and len(norms) == len(verts):
        normals = np.array(norms)
    if not verts:
        return TriMesh.empty()
    return TriMesh(np.array(verts), np.array(tris, dtype=np.int32).reshape(-1, 3), normals)


def save_obj(mesh: TriMesh, path) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append("v %.9g %.9g %.9g" % (v[0], v[1], v[2]))
    if mesh.normals is not None:
        for n in mesh.normals:
            lines.append("vn %.9g %.9g %.9g" % (n[0], n[1], n[2]))
        for t in mesh.triangles:
            lines.append(
                "f %d//%d %d//%d %d//%d"
                % (t[0] + 1, t[0] + 1, t[1] + 1, t[1] + 1, t[2] + 1, t[2] + 1)
            )
    else:
        for t in mesh.triangles:
            lines.append("f %d %d %d" % (t[0] + 1, t[1] + 1, t[2] + 1))
    data = ("\n".join(lines) + "\n").encode("ascii")
    from .rasters import atomic_write_bytes

    atomic_write_bytes(path, data)


# ---------------------------------------------------------------------------
# BVH over triangles (built in numpy, traversed by the compiled kernel)

@dataclass
class PackedBvh:
    node_bounds: np.ndarray  # (M, 6) float64: lo xyz, hi xyz
    node_meta: np.ndarray  # (M, 2) int32: internal (left, right); leaf (-(start+1), count)
    tri_order: np.ndarray  # (T,) int32


def build_bvh(vertices: np.ndarray, triangles: np.ndarray, leaf_size: int = 4) -> PackedBvh:
    tv = vertices[triangles]  # (T, 3, 3)
    lo = tv.min(axis=1)
    hi = tv.max(axis=1)
    cent = 0.5 * (lo + hi)

    bounds: List[np.ndarray] = []
    meta: List[Tuple[int, int]] = []
    order: List[np.ndarray] = []
    order_len = [0]

    def build(idx: np.ndarray) -> int:
        node = len(bounds)
        bounds.append(np.concatenate([lo[idx].min(axis=0), hi[idx].max(axis=0)]))
        meta.append((0, 0))
        if len(idx) <= leaf_size:
            meta[node] = (-(order_len[0] + 1), len(idx))
            order.append(idx)
            order_len[0] += len(idx)
            return node
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        sorted_idx = idx[np.argsort(c[:, axis], kind="stable")]
        half = len(sorted_idx) // 2
        left = build(sorted_idx[:half])
        right = build(sorted_idx[half:])
        meta[node] = (left, right)
        return node

    # median split keeps the tree balanced, so recursion depth is O(log T)
    build(np.arange(len(triangles), dtype=np.int64))
    return PackedBvh(
        node_bounds=np.ascontiguousarray(np.array(bounds)),
        node_meta=np.ascontiguousarray(np.array(meta, dtype=np.int32).reshape(-1, 2)),
        tri_order=np.ascontiguousarray(np.concatenate(order).astype(np.int32)),
    )


# ---------------------------------------------------------------------------
# Depth rendering

def _pixel_dirs(frame) -> np.ndarray:
    """Unnormalized camera-frame direction per pixel center, dz = -1.

    With these directions the Moller-Trumbore ray parameter t equals the
    camera z-depth of the hit directly.
    """
    k = frame.intrinsics
    u = np.arange(k.width, dtype=np.float64) + 0.5
    v = np.arange(k.height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    return np.stack(
        [(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, -np.ones_like(uu)], axis=-1
    ).reshape(-1, 3)


def _cast_mesh_python(verts_cam: np.ndarray, tris: np.ndarray, frame, out_t: np.ndarray):
    """Per-triangle vectorized nearest-hit cast over pixel centers.

    Mirrors the compiled kernel's arithmetic exactly (operand order included).
    out_t is (H*W,) prefilled +inf and updated in place.
    """
    k = frame.intrinsics
    w, h = k.width, k.height
    zbuf = out_t.reshape(h, w)
    for tri in tris:
        a = verts_cam[tri[0]]
        b = verts_cam[tri[1]]
        c = verts_cam[tri[2]]
        zs = -np.array([a[2], b[2], c[2]])
        if (zs <= 1e-9).any():
            u0, u1, v0, v1 = 0, w, 0, h
        else:
            us = k.fx * np.array([a[0], b[0], c[0]]) / zs + k.cx
            vs = k.fy * np.array([a[1], b[1], c[1]]) / zs + k.cy
            u0 = max(0, int(np.floor(us.min() - 0.5)) - 1)
            u1 = min(w, int(np.ceil(us.max() - 0.5)) + 2)
            v0 = max(0, int(np.floor(vs.min() - 0.5)) - 1)
            v1 = min(h, int(np.ceil(vs.max() - 0.5)) + 2)
            if u0 >= u1 or v0 >= v1:
                continue
        uu = np.arange(u0, u1, dtype=np.float64) + 0.5
        vv = np.arange(v0, v1, dtype=np.float64) + 0.5
        dx = ((uu - k.cx) / k.fx)[None, :]
        dy = ((vv - k.cy) / k.fy)[:, None]
        e1 = b - a
        e2 = c - a
        # pvec = d x e2 (dz = -1)
        px = dy * e2[2] - (-1.0) * e2[1]
        py = (-1.0) * e2[0] - dx * e2[2]
        pz = dx * e2[1] - dy * e2[0]
        det = e1[0] * px + e1[1] * py + e1[2] * pz
        tv = 0.0 - a
        u_bc = (tv[0] * px + tv[1] * py + tv[2] * pz)
        qx = tv[1] * e1[2] - tv[2] * e1[1]
        qy = tv[2] * e1[0] - tv[0] * e1[2]
        qz = tv[0] * e1[1] - tv[1] * e1[0]
        v_bc = dx * qx + dy * qy + (-1.0) * qz
        t_num = e2[0] * qx + e2[1] * qy + e2[2] * qz
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            u_bc = u_bc * inv
            v_bc = v_bc * inv
            t = t_num * inv
        ok = (
            (det != 0.0)
            & (u_bc >= 0.0)
            & (u_bc <= 1.0)
            & (v_bc >= 0.0)
            & (u_bc + v_bc <= 1.0)
            & (t > 0.0)
        )
        block = zbuf[v0:v1, u0:u1]
        win = ok & (t < block)
        block[win] = np.broadcast_to(t, block.shape)[win]


def _cast_mesh_native(verts_cam: np.ndarray, tris: np.ndarray, frame, out_t: np.ndarray,
                      workers: int = 0):
    from ._native import _kernels

    bvh = build_bvh(verts_cam, tris)
    dirs = _pixel_dirs(frame)
    verts_c = np.ascontiguousarray(verts_cam)
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        h = frame.intrinsics.height
        w = frame.intrinsics.width
        rows = np.array_split(np.arange(h), workers)
        dirs2 = dirs.reshape(h, w, 3)
        outs = out_t.reshape(h, w)

        def run(rr):
            if len(rr) == 0:
                return
            block_dirs = np.ascontiguousarray(dirs2[rr[0]:rr[-1] + 1].reshape(-1, 3))
            block_out = np.ascontiguousarray(outs[rr[0]:rr[-1] + 1].reshape(-1))
            _kernels.render_mesh_rays(
                verts_c, tris, bvh.node_bounds, bvh.node_meta, bvh.tri_order,
                block_dirs, block_out,
            )
            outs[rr[0]:rr[-1] + 1] = block_out.reshape(-1, w)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, rows))
    else:
        _kernels.render_mesh_rays(
            verts_c, tris, bvh.node_bounds, bvh.node_meta, bvh.tri_order,
            np.ascontiguousarray(dirs), out_t,
        )


def render_mesh_depth(
    meshes: Sequence[Tuple[int, TriMesh, RigidTransform]],
    frame,
    backend: Optional[str] = None,
    workers: int = 0,
) -> Tuple[DepthMap, MaskImage]:
    """Z-buffer depth and instance-id rendering of posed meshes.

    Returns (DepthMap with camera z in millimeters, 0 where no hit; MaskImage
    with the winning object_id, 0 where none). Meshes are merged in list order
    with a strict nearer-wins rule, so exact depth ties keep the earlier mesh.
    """
    k = frame.intrinsics
    h, w = k.height, k.width
    ids = [m[0] for m in meshes]
    if len(set(ids)) != len(ids):
        raise MeshError("object ids must be unique")
    for oid in ids:
        if oid <= 0:
            raise MeshError("object ids must be positive")
        if oid > 65535:
            raise MeshError("object id %d exceeds the 16-bit id map" % oid)

    use = _native.resolve_backend(backend, supports_native=True)
    zbuf = np.full(h * w, np.inf)
    idbuf = np.zeros(h * w, dtype=np.uint16)
    cam_r = frame.pose.rotation
    cam_t = frame.pose.translation
    for oid, mesh, pose in meshes:
        if mesh.is_empty:
            continue
        verts_world = pose.apply(mesh.vertices)
        verts_cam = (verts_world - cam_t) @ cam_r
        t_mesh = np.full(h * w, np.inf)
        if use == "native":
            _cast_mesh_native(verts_cam, mesh.triangles, frame, t_mesh, workers=workers)
        else:
            _cast_mesh_python(verts_cam, mesh.triangles, frame, t_mesh)
        nearer = t_mesh < zbuf
        zbuf[nearer] = t_mesh[nearer]
        idbuf[nearer] = oid

    z = np.where(np.isfinite(zbuf), zbuf, 0.0).reshape(h, w)
    depth = DepthMap.from_meters(z)
    return depth, MaskImage(idbuf.reshape(h, w))


def sample_surface(mesh: TriMesh, count: int, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform surface samples, deterministic for a given seed."""
    if mesh.is_empty:
        raise MeshError("cannot sample an empty mesh")
    if count <= 0:
        raise MeshError("count must be positive")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise MeshError("mesh has no surface area")
    rng = np.random.default_rng(seed)
    tri_idx = rng.choice(len(areas), size=count, p=areas / total)
    r1 = rng.random(count)
    r2 = rng.random(count)
    s = np.sqrt(r1)
    a = mesh.vertices[mesh.triangles[tri_idx, 0]]
    b = mesh.vertices[mesh.triangles[tri_idx, 1]]
    c = mesh.vertices[mesh.triangles[tri_idx, 2]]
    return (1.0 - s)[:, None] * a + (s * (1.0 - r2))[:, None] * b + (s * r2)[:, None] * c


__all__ = [
    "MeshError",
    "TriMesh",
    "ExtractionConfig",
    "extract_mesh",
    "is_closed",
    "load_obj",
    "save_obj",
    "PackedBvh",
    "build_bvh",
    "render_mesh_depth",
    "sample_surface",
]
