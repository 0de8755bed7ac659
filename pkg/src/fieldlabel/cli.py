"""Command-line interface: thin wrappers over the module operations.

Every subcommand exits 0 on success and prints a single-line `error: ...` to
stderr with exit code 1 on failure. Randomized steps take --seed.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import export as export_mod
from . import fields as fields_mod
from . import labeling, meshops, metrics
from .geometry import OrientedBox, RigidTransform
from .rasters import DepthMap, MaskImage
from .scene import calibrate_scale, load_scene, save_scene


def _setup_logging():
    level = os.environ.get("NL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def parse_box_spec(spec: str) -> OrientedBox:
    """Parse "c=x,y,z;h=hx,hy,hz[;q=w,x,y,z]" into an oriented box."""
    parts = {}
    for chunk in spec.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise ValueError("box spec chunk %r has no '='" % chunk)
        key, val = chunk.split("=", 1)
        parts[key.strip()] = [float(x) for x in val.split(",")]
    if "c" not in parts or "h" not in parts:
        raise ValueError("box spec needs c=... and h=... components")
    q = parts.get("q", [1.0, 0.0, 0.0, 0.0])
    pose = RigidTransform(np.asarray(q), np.asarray(parts["c"]))
    return OrientedBox(pose, np.asarray(parts["h"]))


def _load_field(path: str):
    if not os.path.exists(path):
        raise FileNotFoundError("field file not found: %s" % path)
    return fields_mod.VoxelGridField.load(path)


def _march_config(field, args) -> fields_mod.RayMarchConfig:
    overrides = {}
    if getattr(args, "step", None):
        overrides["step"] = args.step
    if getattr(args, "depth_mode", None):
        overrides["mode"] = args.depth_mode
    if getattr(args, "tau", None) and getattr(args, "depth_mode", "") == "sigma-threshold":
        overrides["sigma_threshold"] = args.tau
    return fields_mod.RayMarchConfig.for_aabb(field.aabb, **overrides)


def cmd_ingest(args) -> int:
    scene = load_scene(args.input, format=args.format)
    save_scene(scene, args.out)
    print(json.dumps({"frames": len(scene.frames), "out": args.out}))
    return 0


def cmd_calibrate(args) -> int:
    scene = load_scene(args.scene)
    p1 = np.asarray([float(x) for x in args.p1.split(",")])
    p2 = np.asarray([float(x) for x in args.p2.split(",")])
    scene = calibrate_scale(scene, p1, p2, args.real_distance)
    save_scene(scene, args.out or args.scene)
    print(json.dumps({"scale": scene.scale, "out": args.out or args.scene}))
    return 0


def cmd_extract_mesh(args) -> int:
    field = _load_field(args.field)
    box = parse_box_spec(args.box)
    cfg = meshops.ExtractionConfig(
        resolution=args.resolution,
        sigma_threshold=args.tau,
        min_component_size=args.min_component,
    )
    mesh = meshops.extract_mesh(field, box, cfg)
    meshops.save_obj(mesh, args.out)
    print(json.dumps({
        "vertices": mesh.num_vertices,
        "triangles": mesh.num_triangles,
        "out": args.out,
    }))
    return 0


def cmd_tight_fit(args) -> int:
    project = labeling.load_project(args.project)
    field = _load_field(args.field)
    cfg = labeling.TightFitConfig(
        sigma_threshold=args.tau,
        padding_cells=args.padding,
        resolution=args.resolution,
    )
    box = labeling.tight_fit_box(project, args.id, field, cfg)
    obj = project.get(args.id)
    from dataclasses import replace

    project = labeling._replace_object(
        project, replace(obj, pose=box.pose, half_extents=box.half_extents)
    )
    out = args.out or args.project
    labeling.save_project(project, out)
    print(json.dumps({"box": box.to_dict(), "out": out}))
    return 0


def cmd_icp(args) -> int:
    project = labeling.load_project(args.project)
    field = _load_field(args.field)
    scene = load_scene(args.scene)
    cfg = labeling.IcpConfig(
        max_iterations=args.max_iterations,
        convergence_eps=args.convergence_eps,
        max_correspondence_dist=args.max_correspondence_dist,
        sample_count=args.samples,
        seed=args.seed,
    )
    cache = labeling.MeshCache(os.path.dirname(os.path.abspath(args.project)) or ".")
    march = _march_config(field, args)
    result = labeling.icp_refine(
        project, args.id, field, scene, cfg, mesh_cache=cache, march_config=march
    )
    project = labeling.set_object_pose(project, args.id, result.pose)
    out = args.out or args.project
    labeling.save_project(project, out)
    print(json.dumps({
        "pose": result.pose.to_dict(),
        "residual_rms": result.residual_rms,
        "iterations": result.iterations,
        "correspondences": result.correspondence_count,
        "out": out,
    }))
    return 0


def cmd_export(args) -> int:
    project = labeling.load_project(args.project)
    field = _load_field(args.field)
    scene = load_scene(args.scene)
    cache = labeling.MeshCache(os.path.dirname(os.path.abspath(args.project)) or ".")
    cfg = export_mod.ExportConfig(
        occlusion=export_mod.OcclusionConfig(mode=args.occlusion, epsilon=args.epsilon),
        march_config=_march_config(field, args),
        workers=args.workers,
    )
    export_mod.export_scene(project, field, scene, cfg, args.out, mesh_cache=cache)
    print(json.dumps({"frames": len(scene.frames), "out": args.out}))
    return 0


def _depth_files(d: str):
    return sorted(
        f for f in os.listdir(d) if f.endswith(".png")
    )


def cmd_eval(args) -> int:
    if args.kind == "depth":
        names = _depth_files(args.pred)
        if not names:
            raise FileNotFoundError("no .png files under %s" % args.pred)
        preds, gts, masks = [], [], []
        for name in names:
            gt_path = os.path.join(args.gt, name)
            if not os.path.exists(gt_path):
                raise FileNotFoundError("missing ground truth for %s" % name)
            preds.append(DepthMap.load_png(os.path.join(args.pred, name)).values)
            gts.append(DepthMap.load_png(gt_path).values)
            if args.mask:
                masks.append(MaskImage.load_png(os.path.join(args.mask, name)).values)
        pred = np.concatenate([p.reshape(-1) for p in preds])
        gt = np.concatenate([g.reshape(-1) for g in gts])
        mask = None
        if masks:
            mask = MaskImage(
                np.concatenate([m.reshape(-1) for m in masks]).reshape(1, -1)
            )
        result = metrics.eval_depth(
            pred.reshape(1, -1), gt.reshape(1, -1), mask
        )
        print(json.dumps(result.to_dict()))
        sys.stderr.write(metrics.depth_report_text({"depth": result}))
        return 0
    # segmentation
    names = _depth_files(args.pred)
    if not names:
        raise FileNotFoundError("no .png files under %s" % args.pred)
    preds, gts = [], []
    for name in names:
        preds.append(MaskImage.load_png(os.path.join(args.pred, name)).values)
        gts.append(MaskImage.load_png(os.path.join(args.gt, name)).values)
    pred = MaskImage(np.concatenate([p.reshape(-1) for p in preds]).reshape(1, -1))
    gt = MaskImage(np.concatenate([g.reshape(-1) for g in gts]).reshape(1, -1))
    granularity = "binary" if args.kind == "seg-binary" else "category"
    result = metrics.eval_segmentation(pred, gt, granularity)
    print(json.dumps(result.to_dict()))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    scene = load_scene(args.scene)
    field = _load_field(args.field)
    project = labeling.load_project(args.project)
    cache = labeling.MeshCache(os.path.dirname(os.path.abspath(args.project)) or ".")
    march = _march_config(field, args)
    frontend = args.frontend
    if frontend is None:
        candidate = os.path.join(os.getcwd(), "frontend", "dist")
        frontend = candidate if os.path.isdir(candidate) else None
    app = create_app(
        scene, field, project, mesh_cache=cache, march_config=march,
        backend=args.backend, project_path=args.project, frontend_dir=frontend,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldlabel",
        description="Label density-field scenes and export ground truth.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a scene description into the internal format")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["transforms-json", "colmap-text"],
                   default="transforms-json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("calibrate", help="set metric scale from one known distance")
    p.add_argument("--scene", required=True)
    p.add_argument("--p1", required=True, help="x,y,z of the first picked point")
    p.add_argument("--p2", required=True, help="x,y,z of the second picked point")
    p.add_argument("--real-distance", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("extract-mesh", help="marching-cubes mesh from a box region")
    p.add_argument("--field", required=True)
    p.add_argument("--box", required=True, help='"c=x,y,z;h=hx,hy,hz[;q=w,x,y,z]"')
    p.add_argument("--tau", type=float, default=15.0)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--min-component", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_mesh)

    p = sub.add_parser("tight-fit", help="shrink a box label onto its density")
    p.add_argument("--project", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--tau", type=float, default=15.0)
    p.add_argument("--padding", type=float, default=1.0)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tight_fit)

    p = sub.add_parser("icp", help="refine a mesh label pose against field depth")
    p.add_argument("--project", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--max-iterations", type=int, default=50)
    p.add_argument("--convergence-eps", type=float, default=1e-6)
    p.add_argument("--max-correspondence-dist", type=float, default=0.05)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float)
    p.add_argument("--depth-mode", choices=["transmittance", "sigma-threshold"])
    p.add_argument("--tau", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_icp)

    p = sub.add_parser("export", help="write the per-frame ground-truth layout")
    p.add_argument("--project", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--occlusion", choices=["field", "sensor", "none"], default="field")
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--step", type=float)
    p.add_argument("--depth-mode", choices=["transmittance", "sigma-threshold"])
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("eval", help="depth or segmentation metrics over exported rasters")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask")
    p.add_argument("--kind", choices=["depth", "seg-binary", "seg-category"],
                   default="depth")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP labeling service")
    p.add_argument("--scene", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--project", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--backend", choices=["auto", "python", "native"])
    p.add_argument("--frontend", help="directory with built UI assets")
    p.add_argument("--step", type=float)
    p.add_argument("--depth-mode", choices=["transmittance", "sigma-threshold"])
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # single-line machine-parsable failure
        sys.stderr.write("error: %s\n" % str(e).replace("\n", " "))
        return 1


if __name__ == "__main__":
    sys.exit(main())
