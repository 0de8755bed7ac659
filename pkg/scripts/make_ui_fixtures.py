"""Capture real service responses as fixtures for the frontend tests.

Builds the same small synthetic session the Python tests use, runs the
HTTP app in process, and writes the /scene, /project, and annotation
documents under frontend/tests/fixtures/.
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

from fastapi.testclient import TestClient

from conftest import ring_scene
from fieldlabel import labeling
from fieldlabel.fields import AnalyticField, RayMarchConfig, SpherePrimitive, bake_field
from fieldlabel.geometry import RigidTransform, quat_from_axis_angle
from fieldlabel.labeling import LabelObject, LabelProject, MeshCache
from fieldlabel.service import create_app


def main():
    out_dir = os.path.join(os.path.dirname(__file__), "..", "frontend", "tests", "fixtures")
    os.makedirs(out_dir, exist_ok=True)

    field = bake_field(
        AnalyticField([SpherePrimitive(center=(0.0, 0.0, 0.0), radius=0.3, sigma_inside=50.0)]),
        np.array([[-0.7, -0.7, -0.7], [0.7, 0.7, 0.7]]),
        48,
    )
    sc = ring_scene(n_frames=3, radius=1.6, elevation=0.25, aabb_half=0.7,
                    width=64, height=48, fx=70.0, fy=70.0)
    project = LabelProject(
        scene_ref="scene.json",
        class_table={"ball": 1, "crate": 2},
        objects=(
            LabelObject(id=1, class_name="ball", kind="box",
                        pose=RigidTransform.identity(),
                        half_extents=np.array([0.3, 0.3, 0.3])),
            LabelObject(id=2, class_name="crate", kind="box",
                        pose=RigidTransform(
                            quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), np.radians(40.0)),
                            np.array([0.15, -0.1, 0.2])),
                        half_extents=np.array([0.08, 0.05, 0.11])),
        ),
    )
    app = create_app(sc, field, project, mesh_cache=MeshCache("."),
                     march_config=RayMarchConfig.for_aabb(field.aabb))
    client = TestClient(app)

    docs = {
        "scene.json": client.get("/scene").json(),
        "project.json": client.get("/project").json(),
    }
    for i in range(3):
        docs["annotations_%d.json" % i] = client.get("/frames/%d/annotations" % i).json()
    for name, doc in docs.items():
        with open(os.path.join(out_dir, name), "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")
        print("wrote", name)


if __name__ == "__main__":
    main()
