"""Command-line interface tests.

Box-spec parsing gets direct unit coverage; the subcommands run end to end
on a small synthetic scene in a temp directory, through cli.main(argv).
"""

import hashlib
import json
import os

import numpy as np
import pytest

from fieldlabel import labeling, meshops
from fieldlabel.cli import main, parse_box_spec
from fieldlabel.fields import AnalyticField, SpherePrimitive, bake_field
from fieldlabel.geometry import RigidTransform, quat_from_axis_angle
from fieldlabel.rasters import DepthMap, MaskImage
from fieldlabel.scene import load_scene, save_scene

from conftest import ring_scene


def tree_digest(root):
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(filenames):
            p = os.path.join(dirpath, name)
            h.update(os.path.relpath(p, root).encode())
            with open(p, "rb") as f:
                h.update(f.read())
    return h.hexdigest()


class TestParseBoxSpec:
    def test_center_and_half(self):
        box = parse_box_spec("c=0.1,0.2,0.3;h=0.4,0.5,0.6")
        assert np.allclose(box.pose.translation, [0.1, 0.2, 0.3])
        assert np.allclose(box.half_extents, [0.4, 0.5, 0.6])
        assert np.allclose(box.pose.quaternion, [1.0, 0.0, 0.0, 0.0])

    def test_quaternion_component(self):
        s = np.sqrt(0.5)
        box = parse_box_spec("c=0,0,0;h=1,1,1;q=%.17g,0,0,%.17g" % (s, s))
        # z-axis quarter turn: box x axis lands on world y
        assert np.allclose(box.pose.rotation_matrix @ np.array([1.0, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_whitespace_and_trailing_separator(self):
        box = parse_box_spec(" c = 1,2,3 ; h = 4,5,6 ; ")
        assert np.allclose(box.pose.translation, [1, 2, 3])
        assert np.allclose(box.half_extents, [4, 5, 6])

    def test_missing_center(self):
        with pytest.raises(ValueError, match="c=.*h="):
            parse_box_spec("h=1,1,1")

    def test_missing_half(self):
        with pytest.raises(ValueError, match="c=.*h="):
            parse_box_spec("c=0,0,0")

    def test_chunk_without_equals(self):
        with pytest.raises(ValueError, match="no '='"):
            parse_box_spec("c=0,0,0;banana;h=1,1,1")

    def test_bad_float(self):
        with pytest.raises(ValueError):
            parse_box_spec("c=0,x,0;h=1,1,1")


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Scene json, baked field, and a loose box project on disk."""
    root = tmp_path_factory.mktemp("cli_ws")
    sc = ring_scene(n_frames=2, radius=1.6, elevation=0.25, aabb_half=0.7,
                    width=32, height=32, fx=40.0, fy=40.0)
    scene_path = os.path.join(root, "scene.json")
    save_scene(sc, scene_path)

    field = bake_field(
        AnalyticField([SpherePrimitive(center=(0.0, 0.0, 0.0), radius=0.3, sigma_inside=50.0)]),
        np.array([[-0.7, -0.7, -0.7], [0.7, 0.7, 0.7]]),
        48,
    )
    field_path = os.path.join(root, "field.vxl")
    field.save(field_path)

    obj = labeling.LabelObject(
        id=1,
        class_name="ball",
        kind="box",
        pose=RigidTransform.identity(),
        half_extents=np.array([0.45, 0.45, 0.45]),
    )
    project = labeling.LabelProject(
        scene_ref="scene.json", class_table={"ball": 1}, objects=(obj,)
    )
    project_path = os.path.join(root, "project.json")
    labeling.save_project(project, project_path)
    return {
        "root": str(root),
        "scene": scene_path,
        "field": field_path,
        "project": project_path,
    }


class TestIngest:
    def test_transforms_json_round_trip(self, ws, tmp_path, capsys):
        out = os.path.join(tmp_path, "ingested.json")
        rc = main(["ingest", "--input", ws["scene"], "--out", out])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc == {"frames": 2, "out": out}
        got = load_scene(out)
        want = load_scene(ws["scene"])
        assert len(got.frames) == len(want.frames)
        for a, b in zip(got.frames, want.frames):
            assert np.allclose(a.pose.rotation, b.pose.rotation)
            assert np.allclose(a.pose.translation, b.pose.translation)
            assert a.intrinsics == b.intrinsics

    def test_missing_input_is_single_error_line(self, tmp_path, capsys):
        rc = main(["ingest", "--input", os.path.join(tmp_path, "nope.json"),
                   "--out", os.path.join(tmp_path, "o.json")])
        cap = capsys.readouterr()
        assert rc == 1
        assert cap.out == ""
        assert cap.err.startswith("error: ")
        assert cap.err.count("\n") == 1


class TestCalibrate:
    def test_scale_from_known_distance(self, ws, tmp_path, capsys):
        out = os.path.join(tmp_path, "scaled.json")
        rc = main(["calibrate", "--scene", ws["scene"],
                   "--p1", "0,0,0", "--p2", "1,0,0",
                   "--real-distance", "3.2", "--out", out])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["scale"] == pytest.approx(3.2)
        assert load_scene(out).scale == pytest.approx(3.2)

    def test_coincident_points_error(self, ws, tmp_path, capsys):
        rc = main(["calibrate", "--scene", ws["scene"],
                   "--p1", "1,2,3", "--p2", "1,2,3",
                   "--real-distance", "1.0",
                   "--out", os.path.join(tmp_path, "s.json")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error: ")


class TestExtractMesh:
    def test_sphere_surface(self, ws, tmp_path, capsys):
        out = os.path.join(tmp_path, "sphere.obj")
        rc = main(["extract-mesh", "--field", ws["field"],
                   "--box", "c=0,0,0;h=0.45,0.45,0.45",
                   "--tau", "25", "--resolution", "64", "--out", out])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        mesh = meshops.load_obj(out)
        assert doc["vertices"] == mesh.num_vertices
        assert doc["triangles"] == mesh.num_triangles
        assert doc["out"] == out
        assert meshops.is_closed(mesh)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        cell = 0.9 / 64
        assert np.all(np.abs(radii - 0.3) < 2.0 * cell)

    def test_missing_field_file(self, tmp_path, capsys):
        rc = main(["extract-mesh", "--field", os.path.join(tmp_path, "no.vxl"),
                   "--box", "c=0,0,0;h=1,1,1",
                   "--out", os.path.join(tmp_path, "m.obj")])
        cap = capsys.readouterr()
        assert rc == 1
        assert cap.err.startswith("error: ")
        assert "no.vxl" in cap.err

    def test_bad_box_spec(self, ws, tmp_path, capsys):
        rc = main(["extract-mesh", "--field", ws["field"],
                   "--box", "h=1,1,1",
                   "--out", os.path.join(tmp_path, "m.obj")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error: ")


class TestTightFit:
    def test_box_shrinks_to_sphere(self, ws, tmp_path, capsys):
        out = os.path.join(tmp_path, "fitted.json")
        rc = main(["tight-fit", "--project", ws["project"], "--field", ws["field"],
                   "--id", "1", "--tau", "25", "--resolution", "64", "--out", out])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert np.allclose(doc["box"]["half_extents"], 0.3, atol=0.04)
        fitted = labeling.load_project(out)
        obj = fitted.get(1)
        assert np.allclose(obj.half_extents, 0.3, atol=0.04)
        assert np.allclose(obj.pose.translation, 0.0, atol=0.04)
        # original project untouched when --out is given
        orig = labeling.load_project(ws["project"])
        assert np.allclose(orig.get(1).half_extents, 0.45)

    def test_unknown_object_id(self, ws, tmp_path, capsys):
        rc = main(["tight-fit", "--project", ws["project"], "--field", ws["field"],
                   "--id", "9", "--out", os.path.join(tmp_path, "f.json")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error: ")


class TestIcp:
    def test_recovers_nudged_sphere_translation(self, ws, tmp_path, capsys):
        mesh_path = os.path.join(tmp_path, "sphere.obj")
        rc = main(["extract-mesh", "--field", ws["field"],
                   "--box", "c=0,0,0;h=0.45,0.45,0.45",
                   "--tau", "25", "--resolution", "64", "--out", mesh_path])
        assert rc == 0
        capsys.readouterr()

        nudge = RigidTransform(
            quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), np.deg2rad(3.0)),
            np.array([0.015, -0.01, 0.008]),
        )
        obj = labeling.LabelObject(
            id=1, class_name="ball", kind="mesh", pose=nudge,
            mesh_ref="sphere.obj", scale=1.0,
        )
        project = labeling.LabelProject(
            scene_ref="scene.json", class_table={"ball": 1}, objects=(obj,)
        )
        project_path = os.path.join(tmp_path, "icp_project.json")
        labeling.save_project(project, project_path)

        out = os.path.join(tmp_path, "refined.json")
        rc = main(["icp", "--project", project_path, "--field", ws["field"],
                   "--scene", ws["scene"], "--id", "1",
                   "--samples", "800", "--seed", "3", "--out", out])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["iterations"] >= 1
        assert doc["correspondences"] > 0
        refined = labeling.load_project(out)
        # a sphere pins translation only; rotation stays unobservable
        assert np.linalg.norm(refined.get(1).pose.translation) < 0.006
        assert np.allclose(doc["pose"]["t"], refined.get(1).pose.translation)


class TestExport:
    def test_layout_and_determinism(self, ws, tmp_path, capsys):
        out1 = os.path.join(tmp_path, "a")
        out2 = os.path.join(tmp_path, "b")
        for out in (out1, out2):
            rc = main(["export", "--project", ws["project"], "--field", ws["field"],
                       "--scene", ws["scene"], "--out", out])
            assert rc == 0
            doc = json.loads(capsys.readouterr().out)
            assert doc == {"frames": 2, "out": out}
        for sub in ("depth", "mask_binary", "mask_instance", "mask_class", "annotations"):
            for i in range(2):
                assert os.path.exists(os.path.join(out1, sub, "%06d" % i + (".png" if sub != "annotations" else ".json")))
        assert tree_digest(out1) == tree_digest(out2)
        # the loose box around an opaque sphere must be visible somewhere
        any_pixels = False
        for i in range(2):
            m = MaskImage.load_png(os.path.join(out1, "mask_binary", "%06d.png" % i))
            any_pixels = any_pixels or bool((m.values > 0).any())
        assert any_pixels

    def test_missing_project_errors(self, ws, tmp_path, capsys):
        rc = main(["export", "--project", os.path.join(tmp_path, "no.json"),
                   "--field", ws["field"], "--scene", ws["scene"],
                   "--out", os.path.join(tmp_path, "o")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error: ")


@pytest.fixture(scope="module")
def exported(ws, tmp_path_factory):
    out = os.path.join(tmp_path_factory.mktemp("cli_eval"), "export")
    rc = main(["export", "--project", ws["project"], "--field", ws["field"],
               "--scene", ws["scene"], "--out", out])
    assert rc == 0
    return out


class TestEval:
    def test_depth_self_comparison(self, exported, capsys):
        capsys.readouterr()
        depth_dir = os.path.join(exported, "depth")
        rc = main(["eval", "--pred", depth_dir, "--gt", depth_dir, "--kind", "depth"])
        assert rc == 0
        cap = capsys.readouterr()
        doc = json.loads(cap.out)
        assert doc["rmse"] == 0.0
        assert doc["mae"] == 0.0
        assert doc["delta_105"] == 1.0
        assert doc["pixel_count"] > 0
        # human-readable table goes to stderr, machine json to stdout
        assert "RMSE" in cap.err

    def test_depth_with_mask_restricts_pixels(self, exported, capsys):
        capsys.readouterr()
        depth_dir = os.path.join(exported, "depth")
        mask_dir = os.path.join(exported, "mask_binary")
        rc = main(["eval", "--pred", depth_dir, "--gt", depth_dir,
                   "--mask", mask_dir, "--kind", "depth"])
        assert rc == 0
        masked = json.loads(capsys.readouterr().out)
        total_nonzero = 0
        for name in sorted(os.listdir(depth_dir)):
            d = DepthMap.load_png(os.path.join(depth_dir, name))
            m = MaskImage.load_png(os.path.join(mask_dir, name))
            total_nonzero += int(((d.values > 0) & (m.values > 0)).sum())
        assert masked["pixel_count"] == total_nonzero

    def test_seg_binary_self_comparison(self, exported, capsys):
        capsys.readouterr()
        mask_dir = os.path.join(exported, "mask_binary")
        rc = main(["eval", "--pred", mask_dir, "--gt", mask_dir, "--kind", "seg-binary"])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["f1"] == 1.0
        assert doc["iou"] == 1.0

    def test_empty_pred_dir_errors(self, tmp_path, capsys):
        empty = os.path.join(tmp_path, "empty")
        os.makedirs(empty)
        rc = main(["eval", "--pred", empty, "--gt", empty])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error: ")
