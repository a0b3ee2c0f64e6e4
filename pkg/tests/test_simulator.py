import numpy as np
import pytest

from conftest import small_camera
from mpcview.errors import ConfigError, RejectedInput
from mpcview.geometry import lift_depth_map
from mpcview.simulator import (
    BACKGROUND_FRAME, Box, Disk, Motion, Plane, Scene, SensorModel, Sphere, Texture, apply_sensor,
    capture_sequence, incidence_angles, primitive_from_dict, raycast_depth, render_color, trace,
)


def test_fronto_plane_depth_is_constant():
    cam = small_camera()
    scene = Scene((Plane(point=(0, 0, 1.5), normal=(0, 0, -1)),))
    assert np.allclose(raycast_depth(scene, cam), 1.5)


def test_tilted_plane_matches_closed_form():
    # Oracle: t = n.(p0 - o) / n.d with camera-z-normalized rays.
    cam = small_camera(eye=(0.1, -0.2, 0.0), target=(0.3, 0.1, 2.0))
    n = np.array([0.2, -0.1, -1.0])
    p0 = np.array([0.0, 0.0, 2.0])
    depth = raycast_depth(Scene((Plane(point=tuple(p0), normal=tuple(n)),)), cam)
    dirs = cam.ray_directions()
    expect = ((p0 - cam.center) @ n) / (dirs @ n)
    assert np.allclose(depth, expect, rtol=1e-12)


def test_sphere_closed_form_center_pixel():
    cam = small_camera()
    scene = Scene((Sphere(center=(0, 0, 2.0), radius=0.5),))
    # The center pixel ray is slightly off-axis; solve the quadratic by hand.
    d = cam.ray_directions()[24, 32]
    b = d @ (cam.center - np.array([0, 0, 2.0]))
    a = d @ d
    c = 4.0 - 0.25
    t = (-b - np.sqrt(b * b - a * c)) / a
    assert raycast_depth(scene, cam)[24, 32] == pytest.approx(t, rel=1e-12)


def test_box_face_depth_and_normal():
    cam = small_camera()
    scene = Scene((Box(center=(0, 0, 2.0), half_size=(0.5, 0.5, 0.25)),))
    hits = trace(scene, cam)
    assert hits.depth[24, 32] == pytest.approx(1.75)
    assert np.allclose(hits.normal[24, 32], [0, 0, -1])


def test_disk_radius_limits_hits():
    cam = small_camera()
    scene = Scene((Disk(point=(0, 0, 1.0), normal=(0, 0, -1), radius=0.1),))
    depth = raycast_depth(scene, cam)
    u, v = cam.pixel_grid()
    x = (u - 32) / 60.0
    y = (v - 24) / 60.0
    inside = np.hypot(x, y) <= 0.1 - 1e-9
    outside = np.hypot(x, y) > 0.1 + 1e-9
    assert np.all(np.isfinite(depth[inside])) and np.all(np.isnan(depth[outside]))


def test_nearest_primitive_wins():
    cam = small_camera()
    scene = Scene((Plane(point=(0, 0, 2.0)), Sphere(center=(0, 0, 1.0), radius=0.1)))
    hits = trace(scene, cam)
    assert hits.index[24, 32] == 1 and hits.index[0, 0] == 0


def test_checker_texture_matches_lookup():
    cam = small_camera()
    tex = Texture("checker", period=0.05, contrast=1.0)
    plane = Plane(albedo=(1.0, 0.5, 0.25), texture=tex, point=(0, 0, 1.0), normal=(0, 0, -1), u_axis=(1, 0, 0))
    color = render_color(Scene((plane,)), cam)
    hits = trace(Scene((plane,)), cam)
    s = plane.surface_coords(hits.points.reshape(-1, 3))
    cell = (np.floor(s[:, 0] / 0.05) + np.floor(s[:, 1] / 0.05)).astype(int) % 2 == 0
    expect = np.where(cell[:, None], [1.0, 0.5, 0.25], 0.0).reshape(color.shape)
    assert np.allclose(color, expect)


def test_miss_color_and_lambert():
    cam = small_camera()
    scene = Scene((Disk(point=(0, 0, 1.0), radius=0.05, albedo=(1, 1, 1)),), miss_color=(0.1, 0.2, 0.3),
                  light=(0, 0, 1), ambient=0.2)
    color = render_color(scene, cam)
    assert np.allclose(color[0, 0], [0.1, 0.2, 0.3])
    # Light straight along +z hits the -z-facing disk head-on: full intensity.
    assert np.allclose(color[24, 32], 1.0)


def test_primitive_dict_round_trip():
    for p in (Plane(point=(0, 1, 2), normal=(0, 0, -1), half_extent=(1, 2)), Disk(radius=0.3),
              Sphere(center=(1, 2, 3), radius=0.4, texture=Texture("sine", 0.1, 0.3)), Box(half_size=(1, 2, 3))):
        q = primitive_from_dict(p.to_dict())
        assert type(q) is type(p) and q.to_dict() == p.to_dict()
    with pytest.raises(ConfigError):
        primitive_from_dict({"kind": "torus"})


def test_scene_digest_is_stable_and_sensitive():
    a = Scene((Sphere(center=(0, 0, 1), radius=0.2),))
    assert a.digest() == Scene.from_dict(a.to_dict()).digest()
    assert a.digest() != Scene((Sphere(center=(0, 0, 1), radius=0.21),)).digest()


def test_bias_moves_lifted_points_along_input_rays():
    cam = small_camera(eye=(0.1, 0.0, 0.0), target=(0.0, 0.0, 1.0))
    scene = Scene((Plane(point=(0, 0, 1.2)),))
    clean = raycast_depth(scene, cam)
    biased = apply_sensor(clean, cam, scene, SensorModel(bias_const=0.01), 0)
    assert np.allclose(biased - clean, 0.01)
    a = lift_depth_map(cam, clean).points
    b = lift_depth_map(cam, biased).points
    rays = cam.ray_directions().reshape(-1, 3)
    assert np.allclose(b - a, rays * 0.01)


def test_bias_knots_and_clipping():
    s = SensorModel(bias_const=0.01, depth_knots=((1.0, 2.0), (0.0, 0.02)), angle_knots=((0.0, np.pi / 2), (0.0, 0.01)),
                    max_bias=0.025)
    assert s.bias(np.array([1.0]), np.array([0.0]))[0] == pytest.approx(0.01)
    assert s.bias(np.array([1.5]), np.array([np.pi / 4]))[0] == pytest.approx(0.01 + 0.01 + 0.005)
    assert s.bias(np.array([3.0]), np.array([np.pi / 2]))[0] == pytest.approx(0.025)
    with pytest.raises(ConfigError):
        SensorModel(depth_knots=((2.0, 1.0), (0.0, 0.0)))


def test_default_preset_stays_inside_layer_reach():
    s = SensorModel.preset("default")
    b = s.bias(np.linspace(0.3, 3, 50), np.linspace(0, np.pi / 2, 50))
    assert b.max() <= 0.01 and b.min() > 0


def test_noise_is_deterministic_per_view_and_frame():
    s = SensorModel(noise_sigma=0.003, seed=7)
    a = s.noise("in0", 3, (10, 10))
    assert np.array_equal(a, SensorModel(noise_sigma=0.003, seed=7).noise("in0", 3, (10, 10)))
    assert not np.array_equal(a, s.noise("in1", 3, (10, 10)))
    assert not np.array_equal(a, s.noise("in0", 4, (10, 10)))
    assert not np.array_equal(s.noise("in0", BACKGROUND_FRAME, (10, 10)), s.noise("in0", 0, (10, 10)))
    assert abs(s.noise("x", 0, (200, 200)).std() - 0.003) < 2e-4


def test_incidence_of_fronto_plane_is_small():
    cam = small_camera()
    hits = trace(Scene((Plane(point=(0, 0, 1.0)),)), cam)
    ang = incidence_angles(hits)
    assert ang[24, 32] < 0.02 and ang.max() < np.arctan(np.hypot(32, 24) / 60) + 1e-9


def _rig():
    return [small_camera(eye=(-0.1, 0, 0), cid="in0"), small_camera(eye=(0.1, 0, 0), cid="in1"),
            small_camera(cid="gt0", role="groundtruth")]


def test_capture_sequence_layout_and_background():
    scene = Scene((Sphere(center=(0, 0, 1.0), radius=0.1),), background=Plane(point=(0, 0, 2.0), foreground=False))
    seq = capture_sequence(scene, _rig(), SensorModel(bias_const=0.01), 2)
    assert [c.id for c in seq.input_cameras] == ["in0", "in1"] and [c.id for c in seq.target_cameras] == ["gt0"]
    assert seq.meta == {"num_frames": 2, "seed": 0, "scene_hash": scene.digest()}
    # background capture holds only the wall, biased like any input capture
    wall_only = raycast_depth(Scene(background=scene.background), seq.input_cameras[0])
    assert np.allclose(seq.background.depths["in0"], wall_only + 0.01)
    # ground truth is never biased
    gt = seq.frames[0].groundtruth.depths["gt0"]
    assert gt[24, 32] == pytest.approx(0.9, abs=1e-3)
    with pytest.raises(RejectedInput):
        capture_sequence(scene, _rig(), SensorModel(), 0)


def test_motion_translates_one_primitive():
    scene = Scene((Sphere(center=(0, 0, 1.0), radius=0.1), Sphere(center=(0.3, 0, 1.0), radius=0.1)))
    seq = capture_sequence(scene, _rig(), SensorModel(), 3, Motion(0, (0.0, 0.0, 0.1)))
    c = [seq.frames[t].groundtruth.depths["gt0"][24, 32] for t in range(3)]
    assert np.allclose(np.diff(c), 0.1, atol=5e-4)
    # moving primitive is excluded from the background pre-capture
    assert np.isnan(seq.background.depths["in0"]).all()
