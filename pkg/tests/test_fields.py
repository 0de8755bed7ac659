import math
import os

import numpy as np
import pytest
from scipy.interpolate import RegularGridInterpolator

from fieldlabel import _native
from fieldlabel.fields import (
    AnalyticField,
    BoxPrimitive,
    RayMarchConfig,
    SpherePrimitive,
    VoxelGridField,
    bake_field,
    march_rays,
    ray_depth,
    render_field_depth,
    render_field_rgb,
)
from fieldlabel.geometry import OrientedBox, RigidTransform
from fieldlabel.scene import frame_rays
from tests.conftest import make_frame


def random_grid_field(rng, res=(9, 8, 7), with_rgb=False):
    sigma = rng.uniform(0.0, 30.0, size=res)
    aabb = np.array([[-0.4, -0.5, -0.3], [0.6, 0.4, 0.5]])
    rgb = rng.uniform(0.0, 1.0, size=res + (3,)) if with_rgb else None
    return VoxelGridField(sigma=sigma, aabb=aabb, rgb=rgb)


class TestVoxelGridField:
    def test_trilinear_matches_scipy(self):
        rng = np.random.default_rng(30)
        field = random_grid_field(rng)
        axes = [
            np.linspace(field.aabb[0, a], field.aabb[1, a], field.sigma.shape[a])
            for a in range(3)
        ]
        oracle = RegularGridInterpolator(axes, field.sigma)
        pts = rng.uniform(field.aabb[0], field.aabb[1], size=(500, 3))
        assert np.allclose(field.sample_sigma(pts), oracle(pts), atol=1e-12)

    def test_lattice_nodes_exact(self):
        rng = np.random.default_rng(31)
        field = random_grid_field(rng)
        axes = [
            np.linspace(field.aabb[0, a], field.aabb[1, a], field.sigma.shape[a])
            for a in range(3)
        ]
        nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        got = field.sample_sigma(nodes).reshape(field.sigma.shape)
        # node coordinates rarely land on exact lattice parameters in float,
        # so allow interpolation noise at machine precision
        assert np.allclose(got, field.sigma, atol=1e-10)

    def test_outside_is_zero_boundary_inclusive(self):
        rng = np.random.default_rng(32)
        field = random_grid_field(rng)
        eps = 1e-9
        outside = np.array(
            [
                field.aabb[0] - eps,
                field.aabb[1] + eps,
                [100.0, 0.0, 0.0],
            ]
        )
        assert np.array_equal(field.sample_sigma(outside), [0.0, 0.0, 0.0])
        corners = np.array([field.aabb[0], field.aabb[1]])
        got = field.sample_sigma(corners)
        assert got[0] == field.sigma[0, 0, 0]
        assert np.isclose(got[1], field.sigma[-1, -1, -1], atol=1e-12)

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(33)
        field = random_grid_field(rng, with_rgb=True)
        p = os.path.join(tmp_path, "f.vxl")
        field.save(p)
        back = VoxelGridField.load(p)
        assert np.array_equal(back.sigma, field.sigma)
        assert np.array_equal(back.aabb, field.aabb)
        assert np.array_equal(back.rgb, field.rgb)

    def test_load_rejects_junk(self, tmp_path):
        p = os.path.join(tmp_path, "junk.vxl")
        with open(p, "wb") as f:
            f.write(b"not a field")
        with pytest.raises(ValueError, match="not a voxel field"):
            VoxelGridField.load(p)

    def test_validation(self):
        with pytest.raises(ValueError):
            VoxelGridField(sigma=np.zeros((1, 4, 4)), aabb=np.array([[0, 0, 0], [1, 1, 1]]))
        with pytest.raises(ValueError):
            VoxelGridField(sigma=-np.ones((4, 4, 4)), aabb=np.array([[0, 0, 0], [1, 1, 1]]))
        with pytest.raises(ValueError):
            VoxelGridField(sigma=np.ones((4, 4, 4)), aabb=np.array([[0, 0, 0], [0, 1, 1]]))


class TestAnalyticField:
    def test_max_composition(self):
        a = SpherePrimitive(center=(0, 0, 0), radius=0.5, sigma_inside=10.0)
        b = SpherePrimitive(center=(0.3, 0, 0), radius=0.5, sigma_inside=25.0)
        field = AnalyticField([a, b])
        # overlap region takes the max, not the sum
        assert field.sample_sigma(np.array([[0.2, 0.0, 0.0]]))[0] == 25.0
        assert field.sample_sigma(np.array([[-0.4, 0.0, 0.0]]))[0] == 10.0
        assert field.sample_sigma(np.array([[5.0, 0.0, 0.0]]))[0] == 0.0

    def test_sphere_boundary_inclusive(self):
        field = AnalyticField([SpherePrimitive(center=(0, 0, 0), radius=0.5, sigma_inside=10.0)])
        assert field.sample_sigma(np.array([[0.5, 0.0, 0.0]]))[0] == 10.0

    def test_box_primitive(self):
        box = OrientedBox(RigidTransform.identity(), np.array([0.2, 0.3, 0.1]))
        field = AnalyticField([BoxPrimitive(box=box, sigma_inside=7.0)])
        assert field.sample_sigma(np.array([[0.0, 0.25, 0.0]]))[0] == 7.0
        assert field.sample_sigma(np.array([[0.0, 0.35, 0.0]]))[0] == 0.0

    def test_auto_aabb_covers_primitives(self):
        field = AnalyticField(
            [SpherePrimitive(center=(1.0, 0, 0), radius=0.25, sigma_inside=5.0)]
        )
        assert np.all(field.aabb[0] <= [0.75, -0.25, -0.25])
        assert np.all(field.aabb[1] >= [1.25, 0.25, 0.25])

    def test_bake_nodes_exact(self):
        field = AnalyticField([SpherePrimitive(center=(0, 0, 0), radius=0.3, sigma_inside=50.0)])
        aabb = np.array([[-0.5, -0.5, -0.5], [0.5, 0.5, 0.5]])
        baked = bake_field(field, aabb, 17)
        axes = [np.linspace(-0.5, 0.5, 17)] * 3
        nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        assert np.array_equal(baked.sigma.ravel(), field.sample_sigma(nodes))


class TestRayMarchConfig:
    def test_n_steps_ceil(self):
        cfg = RayMarchConfig(step=0.3, t_far=1.0)
        assert cfg.n_steps == 4

    def test_for_aabb_defaults(self):
        aabb = np.array([[0.0, 0, 0], [1.0, 1, 1]])
        cfg = RayMarchConfig.for_aabb(aabb)
        diag = math.sqrt(3.0)
        assert np.isclose(cfg.step, diag / 1024.0)
        assert np.isclose(cfg.t_far, 2.0 * diag)
        over = RayMarchConfig.for_aabb(aabb, step=0.01, mode="sigma-threshold")
        assert over.step == 0.01
        assert over.mode == "sigma-threshold"

    def test_validation(self):
        with pytest.raises(ValueError):
            RayMarchConfig(step=0.0, t_far=1.0)
        with pytest.raises(ValueError):
            RayMarchConfig(step=0.1, t_far=1.0, t_near=2.0)
        with pytest.raises(ValueError):
            RayMarchConfig(step=0.1, t_far=1.0, mode="nearest")
        with pytest.raises(ValueError):
            RayMarchConfig(step=0.1, t_far=1.0, termination_transmittance=0.0)


def scalar_march_oracle(field, origin, direction, cfg):
    """Step-by-step reference marcher, one ray at a time.

    Follows the documented algorithm directly: samples at t = t_near + i*step,
    accumulated optical depth tau += sigma*step, first crossing wins.
    """
    if cfg.mode == "sigma-threshold":
        threshold = cfg.sigma_threshold
    else:
        threshold = -math.log(cfg.termination_transmittance)
    tau = 0.0
    for i in range(cfg.n_steps):
        t = cfg.t_near + i * cfg.step
        p = origin + t * direction
        s = float(field.sample_sigma(p.reshape(1, 3))[0])
        if cfg.mode == "sigma-threshold":
            if s > threshold:
                return t
        else:
            tau = tau + s * cfg.step
            if tau > threshold:
                return t
    return np.nan


class TestMarchRays:
    def test_python_matches_scalar_oracle_exactly(self, sphere_field):
        rng = np.random.default_rng(34)
        n = 64
        origins = np.tile(np.array([0.0, 0.0, 2.0]), (n, 1))
        dirs = rng.normal(size=(n, 3)) * np.array([0.15, 0.15, 0.1]) + np.array([0, 0, -1.0])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for mode in ("transmittance", "sigma-threshold"):
            cfg = RayMarchConfig(step=0.01, t_far=4.0, mode=mode, sigma_threshold=25.0)
            got = march_rays(sphere_field, origins, dirs, cfg, backend="python")
            expect = np.array(
                [scalar_march_oracle(sphere_field, origins[i], dirs[i], cfg) for i in range(n)]
            )
            assert np.array_equal(got, expect, equal_nan=True)
            assert np.isnan(expect).any() and not np.isnan(expect).all()

    @pytest.mark.skipif(not _native.available(), reason="extension not built")
    def test_backends_bit_identical_on_voxel_grid(self):
        rng = np.random.default_rng(35)
        field = random_grid_field(rng, res=(12, 11, 10))
        n = 400
        origins = rng.uniform(-1.0, 1.0, size=(n, 3))
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for mode in ("transmittance", "sigma-threshold"):
            cfg = RayMarchConfig(step=0.013, t_far=3.0, mode=mode, sigma_threshold=14.0)
            py = march_rays(field, origins, dirs, cfg, backend="python")
            nat = march_rays(field, origins, dirs, cfg, backend="native")
            assert np.array_equal(py, nat, equal_nan=True)
            assert np.isnan(py).any() and not np.isnan(py).all()

    def test_analytic_field_falls_back_to_python(self, sphere_field):
        # the compiled marcher only handles voxel grids; auto must not pick it
        cfg = RayMarchConfig(step=0.01, t_far=4.0)
        o = np.array([[0.0, 0.0, 2.0]])
        d = np.array([[0.0, 0.0, -1.0]])
        t = march_rays(sphere_field, o, d, cfg, backend=None)
        # surface at t=1.7; transmittance drops below 0.5 after two in-object
        # samples (sigma*step = 0.5 per sample)
        assert 1.7 <= t[0] <= 1.7 + 3 * cfg.step

    def test_ray_depth(self, sphere_field):
        cfg = RayMarchConfig(step=0.001, t_far=4.0)
        t = ray_depth(sphere_field, (0.0, 0.0, 2.0), (0.0, 0.0, -1.0), cfg)
        # enters the r=0.3 sphere at t=1.7; sigma*step=0.05 per step, needs
        # ceil(log(2)/0.05)=14 more samples to drop transmittance under 0.5
        assert t is not None
        assert 1.7 <= t <= 1.7 + 15 * cfg.step
        miss = ray_depth(sphere_field, (0.0, 0.0, 2.0), (0.0, 1.0, 0.0), cfg)
        assert miss is None

    def test_ray_depth_requires_unit_direction(self, sphere_field):
        cfg = RayMarchConfig(step=0.01, t_far=4.0)
        with pytest.raises(ValueError, match="unit"):
            ray_depth(sphere_field, (0, 0, 2.0), (0, 0, -2.0), cfg)

    def test_sigma_threshold_mode_gates_on_tau(self):
        field = AnalyticField(
            [
                BoxPrimitive(
                    box=OrientedBox(RigidTransform.identity(), np.array([1.0, 1.0, 0.1])),
                    sigma_inside=30.0,
                )
            ]
        )
        o = np.array([[0.0, 0.0, 2.0]])
        d = np.array([[0.0, 0.0, -1.0]])
        hit = march_rays(field, o, d, RayMarchConfig(step=0.01, t_far=4.0, mode="sigma-threshold", sigma_threshold=25.0))
        assert not np.isnan(hit[0])
        miss = march_rays(field, o, d, RayMarchConfig(step=0.01, t_far=4.0, mode="sigma-threshold", sigma_threshold=40.0))
        assert np.isnan(miss[0])


class TestRenderFieldDepth:
    def test_wall_depth_at_every_pixel(self):
        # a dense slab 2 m ahead; every pixel, corners included, must read
        # within two march steps of 2.0 because depth is measured along the
        # optical axis, not the ray
        wall = AnalyticField(
            [
                BoxPrimitive(
                    box=OrientedBox(
                        RigidTransform(np.array([1.0, 0, 0, 0]), np.array([0.0, 0, -2.1])),
                        np.array([50.0, 50.0, 0.1]),
                    ),
                    sigma_inside=500.0,
                )
            ],
            aabb=np.array([[-50.0, -50, -2.2], [50.0, 50, -2.0]]),
        )
        frame = make_frame(position=(0, 0, 0), look_at=(0, 0, -1), width=32, height=24, fx=20.0, fy=20.0)
        cfg = RayMarchConfig(step=0.005, t_far=4.0)
        depth = render_field_depth(wall, frame, cfg)
        z = depth.meters()
        assert np.all(z > 0)
        assert np.all(np.abs(z - 2.0) <= 2.0 * cfg.step)
        corners = z[[0, 0, -1, -1], [0, -1, 0, -1]]
        assert np.all(np.abs(corners - 2.0) <= 2.0 * cfg.step)

    def test_miss_is_zero(self, sphere_field):
        frame = make_frame(position=(0, 0, 2.0), look_at=(0, 0, 0), width=33, height=31)
        cfg = RayMarchConfig(step=0.01, t_far=5.0)
        z = render_field_depth(sphere_field, frame, cfg).meters()
        assert z[15, 16] > 0  # sphere center
        assert z[0, 0] == 0.0  # background

    def test_thread_pool_matches_serial(self, sphere_field):
        frame = make_frame(position=(0, 0.3, 1.8), look_at=(0, 0, 0), width=24, height=18)
        cfg = RayMarchConfig(step=0.02, t_far=5.0)
        serial = render_field_depth(sphere_field, frame, cfg, n_threads=1)
        pooled = render_field_depth(sphere_field, frame, cfg, n_threads=4)
        assert np.array_equal(serial.values, pooled.values)

    @pytest.mark.skipif(not _native.available(), reason="extension not built")
    def test_render_backend_parity_on_baked_field(self, sphere_field):
        baked = bake_field(sphere_field, np.array([[-0.5] * 3, [0.5] * 3]), 48)
        frame = make_frame(position=(0, 0.2, 1.9), look_at=(0, 0, 0), width=26, height=22)
        cfg = RayMarchConfig(step=0.01, t_far=5.0)
        py = render_field_depth(baked, frame, cfg, backend="python")
        nat = render_field_depth(baked, frame, cfg, backend="native")
        assert np.array_equal(py.values, nat.values)
        assert (py.values > 0).sum() > 50


class TestRenderFieldRgb:
    def test_shape_dtype_and_determinism(self, sphere_field):
        frame = make_frame(position=(0, 0, 2.0), look_at=(0, 0, 0), width=16, height=12)
        cfg = RayMarchConfig(step=0.05, t_far=4.0)
        a = render_field_rgb(sphere_field, frame, cfg)
        b = render_field_rgb(sphere_field, frame, cfg)
        assert a.shape == (12, 16, 3)
        assert a.dtype == np.uint8
        assert np.array_equal(a, b)

    def test_colored_field(self):
        field = AnalyticField(
            [SpherePrimitive(center=(0, 0, 0), radius=0.3, sigma_inside=80.0, rgb=(1.0, 0.0, 0.0))]
        )
        # wide lens so the corner rays miss the sphere
        frame = make_frame(position=(0, 0, 1.5), look_at=(0, 0, 0), width=16, height=12, fx=10.0, fy=10.0)
        img = render_field_rgb(field, frame, RayMarchConfig(step=0.02, t_far=4.0), background=(0, 0, 1.0))
        center = img[6, 8]
        assert center[0] > 150 and center[2] < 100  # red object
        assert img[0, 0][2] > 150  # blue background


class TestBackendResolution:
    def test_explicit_values(self):
        assert _native.resolve_backend("python") == "python"
        with pytest.raises(ValueError, match="unknown backend"):
            _native.resolve_backend("cuda")

    def test_native_requires_support(self):
        if _native.available():
            with pytest.raises(RuntimeError, match="no native path"):
                _native.resolve_backend("native", supports_native=False)

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("FIELDLABEL_BACKEND", "python")
        assert _native.resolve_backend(None) == "python"
        monkeypatch.setenv("FIELDLABEL_BACKEND", "auto")
        expect = "native" if _native.available() else "python"
        assert _native.resolve_backend(None) == expect

    @pytest.mark.skipif(not _native.available(), reason="extension not built")
    def test_auto_prefers_native(self):
        assert _native.resolve_backend(None, supports_native=True) == "native"
        assert _native.resolve_backend(None, supports_native=False) == "python"
