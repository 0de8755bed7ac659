"""Timing comparison between the compiled kernels and the pure-python paths.

Runs the two hot operations, voxel-field depth marching and mesh depth
rendering, with both backends on identical inputs, checks the outputs are
bit-for-bit equal, and prints a small table with the speedup.
"""

import argparse
import time

import numpy as np

from fieldlabel import _native
from fieldlabel.export import cuboid_mesh
from fieldlabel.fields import (
    AnalyticField,
    RayMarchConfig,
    SpherePrimitive,
    bake_field,
    render_field_depth,
)
from fieldlabel.geometry import RigidTransform
from fieldlabel.meshops import ExtractionConfig, extract_mesh, render_mesh_depth
from fieldlabel.geometry import OrientedBox
from fieldlabel.scene import CameraIntrinsics, CameraPose, Frame


def make_frame(size):
    c = np.array([0.0, 0.3, 1.6])
    back = c / np.linalg.norm(c)
    up = np.array([0.0, 1.0, 0.0])
    x = np.cross(up, back)
    x /= np.linalg.norm(x)
    y = np.cross(back, x)
    r = np.stack([x, y, back], axis=1)
    k = CameraIntrinsics(fx=1.2 * size, fy=1.2 * size, cx=size / 2.0, cy=size / 2.0,
                         width=size, height=size)
    return Frame(index=0, image_path="bench.png", intrinsics=k,
                 pose=CameraPose(rotation=r, translation=c))


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256, help="render size in pixels")
    ap.add_argument("--resolution", type=int, default=128, help="voxel grid resolution")
    ap.add_argument("--repeats", type=int, default=3, help="timing repeats, best kept")
    args = ap.parse_args()

    if not _native.available():
        print("compiled extension not available; nothing to compare")
        return 1

    analytic = AnalyticField(
        [
            SpherePrimitive(center=(0.0, 0.0, 0.0), radius=0.3, sigma_inside=50.0),
            SpherePrimitive(center=(0.25, 0.1, -0.1), radius=0.12, sigma_inside=80.0),
        ],
        aabb=np.array([[-0.5, -0.5, -0.5], [0.5, 0.5, 0.5]]),
    )
    field = bake_field(analytic, analytic.aabb, args.resolution)
    frame = make_frame(args.size)
    cfg = RayMarchConfig.for_aabb(field.aabb)

    rows = []

    py_depth, t_py = best_of(
        lambda: render_field_depth(field, frame, cfg, backend="python"), args.repeats
    )
    nat_depth, t_nat = best_of(
        lambda: render_field_depth(field, frame, cfg, backend="native"), args.repeats
    )
    if not np.array_equal(py_depth.values, nat_depth.values):
        raise SystemExit("field depth: backend outputs differ")
    rows.append(("field depth %dx%d, grid %d^3" % (args.size, args.size, args.resolution),
                 t_py, t_nat))

    sphere = extract_mesh(
        field,
        OrientedBox(RigidTransform.identity(), np.array([0.45, 0.45, 0.45])),
        ExtractionConfig(resolution=96, sigma_threshold=25.0),
    )
    meshes = [
        (1, sphere, RigidTransform.identity()),
        (2, cuboid_mesh(np.array([0.1, 0.08, 0.12])),
         RigidTransform(np.array([1.0, 0, 0, 0]), np.array([0.05, -0.2, 0.3]))),
    ]
    (py_md, py_ids), t_py_m = best_of(
        lambda: render_mesh_depth(meshes, frame, backend="python"), args.repeats
    )
    (nat_md, nat_ids), t_nat_m = best_of(
        lambda: render_mesh_depth(meshes, frame, backend="native"), args.repeats
    )
    if not (np.array_equal(py_md.values, nat_md.values)
            and np.array_equal(py_ids.values, nat_ids.values)):
        raise SystemExit("mesh depth: backend outputs differ")
    rows.append(("mesh depth %dx%d, %d tris" % (args.size, args.size, sphere.num_triangles + 12),
                 t_py_m, t_nat_m))

    name_w = max(len(r[0]) for r in rows)
    print("%-*s  %10s  %10s  %8s" % (name_w, "operation", "python", "native", "speedup"))
    for name, tp, tn in rows:
        print("%-*s  %9.3fs  %9.3fs  %7.1fx" % (name_w, name, tp, tn, tp / tn))
    print("outputs bit-for-bit identical across backends")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
