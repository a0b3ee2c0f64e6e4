import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_pose, small_camera
from mpcview.errors import RejectedInput
from mpcview.geometry import (
    CameraModel, Intrinsics, PointCloud, Pose, lift_depth_map, project, rasterize, sample_image, unproject,
)


def naive_project(cam, p):
    # Oracle: explicit world->camera via the inverse 4x4 and K matrix.
    m = np.linalg.inv(cam.pose.to_matrix())
    x, y, z, _ = m @ np.append(p, 1.0)
    k = cam.intrinsics.matrix
    uvw = k @ np.array([x, y, z])
    return uvw[0] / uvw[2], uvw[1] / uvw[2], z


def test_identity_pose_center_pixel():
    cam = small_camera()
    proj = project(cam, np.array([[0.0, 0.0, 2.0]]))
    assert proj.u[0] == pytest.approx(32.0) and proj.v[0] == pytest.approx(24.0)
    assert proj.z[0] == 2.0


def test_look_at_identity():
    assert np.allclose(Pose.look_at((0, 0, 0), (0, 0, 1)).rotation, np.eye(3))


def test_project_matches_matrix_oracle(rng):
    for _ in range(50):
        intr = Intrinsics(rng.uniform(50, 900), rng.uniform(50, 900), rng.uniform(10, 300), rng.uniform(10, 200), 320, 240)
        cam = CameraModel(intr, random_pose(rng))
        p = rng.uniform(-3, 3, 3)
        proj = project(cam, p[None])
        u, v, z = naive_project(cam, p)
        if z <= 0:
            assert proj.behind[0] and np.isnan(proj.u[0])
        else:
            assert proj.u[0] == pytest.approx(u, rel=1e-10, abs=1e-8)
            assert proj.v[0] == pytest.approx(v, rel=1e-10, abs=1e-8)
            assert proj.z[0] == pytest.approx(z, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_project_unproject_round_trip(seed):
    rng = np.random.default_rng(seed)
    intr = Intrinsics(rng.uniform(100, 1000), rng.uniform(100, 1000), 320, 240, 640, 480)
    cam = CameraModel(intr, random_pose(rng))
    u, v = rng.uniform(0, 640, 20), rng.uniform(0, 480, 20)
    d = rng.uniform(0.1, 10, 20)
    proj = project(cam, unproject(cam, u, v, d))
    assert np.allclose(proj.u, u, atol=1e-9) and np.allclose(proj.v, v, atol=1e-9) and np.allclose(proj.z, d, atol=1e-9)


def test_pose_inverse_and_compose(rng):
    a, b = random_pose(rng), random_pose(rng)
    assert np.allclose(a.compose(a.inverse()).to_matrix(), np.eye(4), atol=1e-12)
    assert np.allclose(a.compose(b).to_matrix(), a.to_matrix() @ b.to_matrix(), atol=1e-12)


@pytest.mark.parametrize("bad", [np.diag([1.0, 1.0, -1.0]), np.diag([1.0, 1.0, 1.01]), np.full((3, 3), np.nan)])
def test_pose_rejects_non_rotation(bad):
    with pytest.raises(RejectedInput):
        Pose(bad, np.zeros(3))


@pytest.mark.parametrize("kw", [dict(fx=0), dict(width=0), dict(cx=-1), dict(cy=500), dict(width=10.5)])
def test_intrinsics_validation(kw):
    args = dict(fx=100, fy=100, cx=32, cy=24, width=64, height=48)
    args.update(kw)
    with pytest.raises(RejectedInput):
        Intrinsics(**args)


def test_scaled_intrinsics_map_pixel_centers():
    cam = small_camera()
    hi = cam.scaled(2)
    assert hi.shape == (96, 128)
    p = unproject(cam, np.array([10.5]), np.array([7.5]), np.array([1.3]))
    proj = project(hi, p)
    assert proj.u[0] == pytest.approx(21.0) and proj.v[0] == pytest.approx(15.0)


def test_unproject_rejects_invalid_depth():
    cam = small_camera()
    for d in (0.0, -1.0, np.nan, np.inf):
        with pytest.raises(RejectedInput):
            unproject(cam, 1.0, 1.0, d)


def test_project_rejects_non_finite_points():
    with pytest.raises(RejectedInput):
        project(small_camera(), np.array([[np.nan, 0, 1]]))


def test_ray_directions_have_unit_camera_z(rng):
    cam = CameraModel(small_camera().intrinsics, random_pose(rng))
    z = cam.world_to_camera(cam.center + cam.ray_directions())[..., 2]
    assert np.allclose(z, 1.0)


def test_lift_then_rasterize_same_camera_is_identity(rng):
    cam = small_camera()
    depth = rng.uniform(1, 3, cam.shape)
    depth[5, 7] = np.nan
    out = rasterize(lift_depth_map(cam, depth), cam, splat_radius=0)
    assert np.allclose(out, depth, equal_nan=True, atol=1e-12)


def test_rasterize_zbuffer_keeps_nearest_and_lowest_index():
    cam = small_camera()
    pts = unproject(cam, np.array([10.5, 10.5, 10.5]), np.array([5.5, 5.5, 5.5]), np.array([2.0, 1.0, 1.0]))
    cloud = PointCloud(pts, np.arange(3), np.zeros(3, np.int64), ("a",))
    depth, idx = rasterize(cloud, cam, splat_radius=1, return_index=True)
    assert depth[5, 10] == pytest.approx(1.0)
    assert idx[5, 10] == 1
    assert np.isfinite(depth[4:7, 9:12]).all() and np.isnan(depth[3, 10])
    assert np.count_nonzero(np.isfinite(depth)) == 9


def test_rasterize_ignores_points_behind():
    cam = small_camera()
    cloud = PointCloud(np.array([[0.0, 0.0, -1.0]]), np.zeros(1, np.int64), np.zeros(1, np.int64), ("a",))
    assert np.isnan(rasterize(cloud, cam)).all()


def naive_bilinear(img, u, v):
    # Oracle: weights from the four surrounding texel centers, with edge clamping.
    h, w = img.shape
    x = min(max(u - 0.5, 0.0), w - 1.0)
    y = min(max(v - 0.5, 0.0), h - 1.0)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    return (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x1] * fx * (1 - fy)
            + img[y1, x0] * (1 - fx) * fy + img[y1, x1] * fx * fy)


def test_bilinear_matches_naive_oracle(rng):
    img = rng.random((9, 13))
    u, v = rng.uniform(0, 13, 200), rng.uniform(0, 9, 200)
    vals, ok = sample_image(img, u, v)
    assert ok.all()
    assert np.allclose(vals, [naive_bilinear(img, a, b) for a, b in zip(u, v)], atol=1e-12)


def test_sampling_at_texel_center_is_exact(rng):
    img = rng.random((5, 6, 3))
    vals, ok = sample_image(img, np.array([2.5]), np.array([3.5]))
    assert ok.all() and np.array_equal(vals[0], img[3, 2])
    vals, _ = sample_image(img, np.array([2.9]), np.array([3.1]), mode="nearest")
    assert np.array_equal(vals[0], img[3, 2])


def test_sampling_out_of_bounds_and_nan():
    img = np.ones((4, 4))
    img[0, 0] = np.nan
    vals, ok = sample_image(img, np.array([-0.1, 4.0, 0.6, 3.0]), np.array([1.0, 1.0, 0.6, 3.0]))
    assert ok.tolist() == [False, False, False, True]
    assert np.isnan(vals[:3]).all()
