"""Acceptance criteria at full resolution.

Each test prints one PASS/FAIL line (repeated in the session summary) with
the measured numbers, then asserts the criterion at its stated threshold.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from acceptance_log import record
from conftest import random_pose
from io_fixtures import KINDS, corruptions, random_fixture, read_fixture, same
from mpcview import io, scenes
from mpcview.aggregate import gather_views
from mpcview.errors import FormatError
from mpcview.experiments import COVERAGE_TOL, evaluate_case, simulate_case
from mpcview.geometry import CameraModel, Intrinsics, project, unproject, valid_depth
from mpcview.metrics import flicker, psnr, silhouette_band
from mpcview.pipeline import PhaseTimer, RenderOptions, render_view
from mpcview.render import sort_by_depth, temporal_average, upsample2x, volume_render
from mpcview.simulator import SensorModel, capture_sequence, trace
from mpcview.volume import build_mpc

pytestmark = pytest.mark.acceptance


def _case(name, gt_index=0, frames=None, width=scenes.WIDTH, height=scenes.HEIGHT, seed=0):
    p = scenes.preset(name, width, height, seed)
    seq = capture_sequence(p.scene, p.rig, p.sensor, frames or p.num_frames, p.motion)
    return p, seq, seq.target_cameras[gt_index]


def _inputs(seq, t=0, background=True):
    cams = seq.input_cameras
    fr = seq.frames[t]
    out = dict(cameras=cams, depths=[fr.inputs.depths[c.id] for c in cams],
               colors=[fr.inputs.colors[c.id] for c in cams])
    if background and seq.background is not None:
        out["bg_depths"] = [seq.background.depths[c.id] for c in cams]
        out["bg_colors"] = [seq.background.colors[c.id] for c in cams]
    return out


def _render(seq, novel, options=RenderOptions(), t=0, timer=None):
    a = _inputs(seq, t)
    return render_view(a["cameras"], a["depths"], a["colors"], novel, options, a.get("bg_depths"),
                       a.get("bg_colors"), timer)


# 1 -------------------------------------------------------------------------

def test_geometry_round_trip():
    rng = np.random.default_rng(1)
    cases = []
    for i in range(1000):
        w, h = int(rng.integers(32, 1281)), int(rng.integers(32, 961))
        f = rng.uniform(100, 2000)
        k = Intrinsics(f, f * rng.uniform(0.9, 1.1), rng.uniform(0, w), rng.uniform(0, h), w, h)
        cam = CameraModel(k, random_pose(rng), f"c{i}")
        z = rng.uniform(0.1, 20)
        pc = np.array([rng.uniform(-1, 1) * z, rng.uniform(-1, 1) * z, z])
        cases.append((cam, cam.camera_to_world(pc)))
    start = time.perf_counter()
    worst = 0.0
    for cam, x in cases:
        p = project(cam, x)
        back = unproject(cam, p.u, p.v, p.z)
        worst = max(worst, float(np.abs(back - x).max()))
    elapsed = time.perf_counter() - start
    ok = record(1, "project/unproject identity", worst <= 1e-9 and elapsed < 1.0,
                f"max error {worst:.2e} m (<= 1e-9), {len(cases)} cases in {elapsed:.3f} s (< 1 s)")
    assert ok


# 2 -------------------------------------------------------------------------

def test_volume_rendering_conservation():
    rng = np.random.default_rng(2)
    n_pix, layers = 100_000, 12
    depths = rng.uniform(0.3, 3.0, (layers, 1, n_pix))
    depths[rng.random(depths.shape) < 0.25] = np.nan
    sigma = rng.exponential(1.0, depths.shape) * (rng.random(depths.shape) < 0.9)
    sigma[rng.random(depths.shape) < 0.05] = 1e4
    feats = rng.random(depths.shape + (3,))
    blend = volume_render(sort_by_depth(depths, feats, sigma))
    cons = float(np.abs(blend.weight_map + blend.residual - 1.0).max())

    # one opaque candidate among empty slots, placed at a random layer
    d1 = np.full((layers, 1, 1000), np.nan)
    s1 = np.zeros_like(d1)
    slot = rng.integers(0, layers, 1000)
    d1[slot, 0, np.arange(1000)] = rng.uniform(0.5, 2, 1000)
    s1[slot, 0, np.arange(1000)] = 1e6
    single = volume_render(sort_by_depth(d1, np.ones(d1.shape + (3,)), s1))
    opaque = float(np.abs(single.weight_map - 1.0).max())
    ok = record(2, "compositing conservation", cons <= 1e-6 and opaque <= 1e-9,
                f"max |sum w + T - 1| = {cons:.1e} (<= 1e-6) over 1e5 px, opaque single |w - 1| = {opaque:.1e} (<= 1e-9)")
    assert ok


# 3 -------------------------------------------------------------------------

def plane_depth_oracle(plane, camera):
    """Closed-form camera-z depth of a rectangle per pixel center; NaN off the rectangle."""
    n = np.asarray(plane.normal, float) / np.linalg.norm(plane.normal)
    p0 = np.asarray(plane.point, float)
    k = camera.intrinsics
    h, w = camera.shape
    u, v = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    d_cam = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    d_world = d_cam @ camera.pose.rotation.T
    c = camera.pose.translation
    t = ((p0 - c) @ n) / (d_world @ n)  # camera z = t since d_cam has z = 1
    x = c + t[..., None] * d_world
    # in-plane axes used by the rectangle extent
    ax = plane._axes
    s0, s1 = (x - p0) @ ax[0], (x - p0) @ ax[1]
    inside = (t > 0) & (np.abs(s0) <= plane.half_extent[0]) & (np.abs(s1) <= plane.half_extent[1])
    return np.where(inside, t, np.nan)


def test_slant_suite_mpc_vs_sweep():
    sensor = SensorModel.preset("default")
    start = time.perf_counter()
    rows, oracle_err = [], 0.0
    for angle in scenes.SLANT_ANGLES:
        case = simulate_case(angle, sensor)
        scene, _ = scenes.slant_case(angle)
        truth = plane_depth_oracle(scene.primitives[0], case.novel)
        both = valid_depth(truth) & valid_depth(case.gt_depth)
        oracle_err = max(oracle_err, float(np.abs(truth[both] - case.gt_depth[both]).max()))
        case.gt_depth = truth
        rows.append(evaluate_case(case, RenderOptions(), COVERAGE_TOL))
    elapsed = time.perf_counter() - start
    for r in rows:
        print(f"  {r['angle']:2d} deg  coverage mpc {r['coverage_mpc']:.3f} sweep {r['coverage_sweep']:.3f}"
              f" | extent mpc {r['extent_coverage_mpc']:.3f} sweep {r['extent_coverage_sweep']:.3f}"
              f" | PSNR fg mpc {r['psnr_mpc']:.2f} sweep {r['psnr_sweep']:.2f}"
              f" | surface mpc {r['surface_psnr_mpc']:.2f} sweep {r['surface_psnr_sweep']:.2f}")
    order_fail = [r["angle"] for r in rows if r["coverage_mpc"] < r["coverage_sweep"]]
    steep = [r for r in rows if r["angle"] >= 80]
    gaps = [r["coverage_mpc"] - r["coverage_sweep"] for r in steep]
    psnr_gaps = [r["psnr_mpc"] - r["psnr_sweep"] for r in steep]
    ok = (not order_fail and min(gaps) >= 0.15 and min(psnr_gaps) >= 1.0 and elapsed < 120
          and oracle_err < 1e-9)
    record(3, "slant suite, MPC vs sweep coverage", ok,
           f"ordering fails at {order_fail or 'none'}; >=80 deg coverage gap {min(gaps):+.3f} (>= 0.15), "
           f"PSNR gap {min(psnr_gaps):+.2f} dB (>= 1); oracle/raycast {oracle_err:.1e}; {elapsed:.0f} s (< 120)")
    assert oracle_err < 1e-9 and elapsed < 120
    assert not order_fail
    assert min(gaps) >= 0.15 and min(psnr_gaps) >= 1.0


# 4 -------------------------------------------------------------------------

def test_unbiased_fidelity():
    p, seq, novel = _case("unbiased")
    out = _render(seq, novel)
    hits = trace(p.scene, novel)
    band = silhouette_band(hits.index, 2)
    gt = seq.frames[0].groundtruth
    score = psnr(out.image, gt.colors[novel.id], ~band)
    fg = (hits.index >= 0) & ~band & np.array([pr.foreground for pr in hits.primitives] + [False])[hits.index]
    fg &= valid_depth(out.blend.peak_depth)
    mae = float(np.abs(out.blend.peak_depth[fg] - gt.depths[novel.id][fg]).mean())
    record(4, "unbiased fidelity", score >= 35 and mae <= 0.003,
           f"PSNR {score:.2f} dB (>= 35) outside 2-px band; weight-peak depth MAE {mae * 1000:.2f} mm (<= 3) "
           f"on {int(fg.sum())} foreground px")
    assert score >= 35
    assert mae <= 0.003


# 5 -------------------------------------------------------------------------

def first_hit_depth(scene, camera, points):
    """Camera-z of the first surface on the ray from ``camera`` toward each point."""
    c = camera.center
    dirs = points - c
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    best = np.full(len(points), np.inf)
    for prim in scene.all_primitives(True):
        t, _ = prim.intersect(c, dirs)
        best = np.minimum(best, t)
    z_per_t = dirs @ camera.pose.rotation[:, 2]
    return best * z_per_t


def test_occlusion_soundness():
    view = 1  # second input camera: the card hides part of the wall from it
    p, seq, novel = _case("occluder")
    a = _inputs(seq)
    eps = RenderOptions().density.eps_occ
    vol = build_mpc(a["depths"], a["cameras"], novel)
    layers, ok = vol.layers, vol.layer_valid
    u, v = novel.pixel_grid()
    li, ri, ci = np.nonzero(ok)
    pts = unproject(novel, u[ri, ci], v[ri, ci], layers[li, ri, ci])
    _, visible = gather_views(pts, a["cameras"], a["colors"], a["depths"], eps)
    cam = a["cameras"][view]
    proj = project(cam, pts)
    in_view = ~proj.behind & (proj.u >= 0) & (proj.u < cam.shape[1]) & (proj.v >= 0) & (proj.v < cam.shape[0])
    margin = proj.z - first_hit_depth(p.scene, cam, pts)
    occluded = in_view & (margin > 2 * eps)
    clear = in_view & (margin <= eps)
    tested = occluded | clear
    agree = (occluded & ~visible[view]) | (clear & visible[view])
    frac = float(agree[tested].mean())
    record(5, "occlusion soundness", frac >= 0.99 and occluded.sum() > 1000,
           f"{frac * 100:.2f}% agreement (>= 99%) on {int(tested.sum())} candidates, "
           f"{int(occluded.sum())} oracle-occluded by > 2 eps_occ")
    assert occluded.sum() > 1000
    assert frac >= 0.99


# 6 -------------------------------------------------------------------------

def test_temporal_flicker_reduction():
    p, seq, novel = _case("noisy")
    assert len(seq.frames) == 30 and p.sensor.noise_sigma == 0.003
    images = [_render(seq, novel, t=t).image for t in range(len(seq.frames))]
    static = np.ones(novel.shape, bool)  # nothing moves in this scene
    f1 = flicker(images, static)
    f3 = flicker(temporal_average(images, 3), static)
    ratio = f3 / f1
    record(6, "temporal averaging", ratio <= 0.70,
           f"flicker w=3 {f3:.5f} / w=1 {f1:.5f} = {ratio:.3f} (<= 0.70, independent noise 0.577)")
    assert ratio <= 0.70


# 7 -------------------------------------------------------------------------

def _box_down(img):
    h, w = img.shape[0] // 2, img.shape[1] // 2
    return img.reshape(h, 2, w, 2, -1).mean(axis=(1, 3))


def _gradient_energy(img):
    lum = img.mean(axis=-1)
    return float((np.diff(lum, axis=0) ** 2).mean() + (np.diff(lum, axis=1) ** 2).mean())


def test_highres_path():
    opts = RenderOptions(highres=True)
    _, seq, novel = _case("flat")
    out = _render(seq, novel, opts)
    mae = float(np.abs(_box_down(out.image_highres) - out.image).mean())
    _, seq_c, novel_c = _case("checker")
    out_c = _render(seq_c, novel_c, opts)
    naive = np.moveaxis(upsample2x(np.moveaxis(out_c.image, -1, 0)), 0, -1)
    gain = _gradient_energy(out_c.image_highres) / _gradient_energy(naive)
    record(7, "high-resolution rendering", mae < 0.02 and gain >= 1.2 and
           out.image_highres.shape == (2 * scenes.HEIGHT, 2 * scenes.WIDTH, 3),
           f"box-downsampled MAE {mae:.4f} (< 0.02) on smooth scene; checker gradient energy x{gain:.2f} "
           f"vs upsampled base (>= 1.2)")
    assert out.image_highres.shape == (2 * scenes.HEIGHT, 2 * scenes.WIDTH, 3)
    assert mae < 0.02
    assert gain >= 1.2


# 8 -------------------------------------------------------------------------

def test_io_round_trips_and_fuzz(tmp_path):
    rng = np.random.default_rng(8)
    kinds = [KINDS[i % len(KINDS)] for i in range(100)]
    bad = []
    for kind in kinds:
        path, want = random_fixture(rng, kind, tmp_path)
        if not same(kind, read_fixture(kind, path), want):
            bad.append(kind)
    rigs_ok = 0
    for i in range(20):
        rig = []
        for j in range(int(rng.integers(1, 7))):
            w, h = int(rng.integers(2, 2000)), int(rng.integers(2, 2000))
            k = Intrinsics(*rng.uniform(100, 900, 2), rng.uniform(0.01, 0.99) * w, rng.uniform(0.01, 0.99) * h, w, h)
            rig.append(CameraModel(k, random_pose(rng), f"cam{i}_{j}", ("input", "novel", "groundtruth")[j % 3]))
        io.write_rig(tmp_path / f"rig{i}.json", rig)
        back = io.read_rig(tmp_path / f"rig{i}.json")
        rigs_ok += all(np.array_equal(a.pose.rotation, b.pose.rotation)
                       and np.array_equal(a.pose.translation, b.pose.translation)
                       and a.intrinsics == b.intrinsics and a.role == b.role for a, b in zip(rig, back))
    fuzz, crashes = 0, []
    for kind in KINDS:
        for j in range(3):
            path, _ = random_fixture(rng, kind, tmp_path)
            blobs = corruptions(path.read_bytes())
            blob = path.read_bytes()
            for _ in range(10):  # random byte flips in the header region
                b = bytearray(blob)
                b[int(rng.integers(0, min(len(b), 24)))] ^= int(rng.integers(1, 256))
                blobs.append(bytes(b))
            for k, data in enumerate(blobs):
                p = tmp_path / f"fuzz_{kind}_{j}_{k}"
                p.write_bytes(data)
                try:
                    read_fixture(kind, p)
                except FormatError:
                    fuzz += 1
                except Exception as e:  # anything else is a crash
                    crashes.append(f"{kind}: {type(e).__name__}: {e}")
                else:
                    # a flip may land on a value byte and still be well-formed
                    if k < len(corruptions(blob)):
                        crashes.append(f"{kind}: corruption {k} accepted")
    record(8, "io round trips and fuzzing", not bad and rigs_ok == 20 and not crashes,
           f"{100 - len(bad)}/100 raster/volume fixtures and {rigs_ok}/20 rigs bit-exact; "
           f"{fuzz} malformed inputs -> FormatError, {len(crashes)} other outcomes")
    assert not bad and rigs_ok == 20
    assert not crashes, crashes[:5]


# 9 -------------------------------------------------------------------------

def _cli(*args):
    return subprocess.run([sys.executable, "-m", "mpcview.cli", *map(str, args)], capture_output=True, text=True)


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(Path(root).rglob("*"))
            if p.is_file() and p.name not in ("timing.csv", "timing.png")}


def test_render_jobs_determinism(tmp_path):
    mismatched = []
    for name in ("unbiased", "occluder"):
        seq = tmp_path / name
        r = _cli("simulate", "--scene", f"preset:{name}", "--frames", 3, "-o", seq)
        assert r.returncode == 0, r.stderr
        trees = []
        for jobs in (1, 8):
            out = tmp_path / f"{name}_j{jobs}"
            r = _cli("render", "--sequence", seq, "--jobs", jobs, "-o", out)
            assert r.returncode == 0, r.stderr
            trees.append(_tree(out))
        if trees[0] != trees[1] or not trees[0]:
            mismatched.append(name)
    ok = record(9, "render determinism across --jobs", not mismatched,
                f"--jobs 1 vs 8 bit-identical on unbiased and occluder (3 frames each); mismatches: "
                f"{mismatched or 'none'}")
    assert ok


# 10 ------------------------------------------------------------------------

def test_full_frame_performance():
    p, seq, novel = _case("biased")
    timer = PhaseTimer()
    start = time.perf_counter()
    out = _render(seq, novel, timer=timer)
    elapsed = time.perf_counter() - start
    phases = ", ".join(f"{k} {v:.2f}s" for k, v in timer.totals.items())
    assert out.volume.num_layers == 12
    ok = record(10, "full-frame performance", elapsed < 10 and set(timer.totals) >= {"volume", "aggregate",
                                                                                   "density", "render"},
                f"480x640, K=4, N=3 in {elapsed:.2f} s (< 10): {phases}")
    assert ok
