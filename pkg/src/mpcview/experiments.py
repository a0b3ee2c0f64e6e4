"""Slant-suite comparison of MPC against the novel-view sweep baseline."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import scenes
from .geometry import valid_depth
from .metrics import psnr, silhouette_band
from .pipeline import RenderOptions, render_view
from .simulator import SensorModel, capture_sequence, trace
from .volume import coverage_fraction

COVERAGE_TOL = 0.005
COLUMNS = ("angle", "coverage_mpc", "coverage_sweep", "extent_coverage_mpc", "extent_coverage_sweep",
           "psnr_mpc", "psnr_sweep", "surface_psnr_mpc", "surface_psnr_sweep", "pixels")


@dataclass
class SlantInputs:
    """One slant-suite case as the renderer sees it."""

    angle: int
    cameras: list
    depths: list
    colors: list
    novel: object
    gt_color: np.ndarray
    gt_depth: np.ndarray
    surface: np.ndarray  # pixels of the plane, silhouette band removed


def simulate_case(angle, sensor: SensorModel, width=scenes.WIDTH, height=scenes.HEIGHT) -> SlantInputs:
    scene, rig = scenes.slant_case(angle, width, height)
    seq = capture_sequence(scene, rig, sensor, 1)
    novel = seq.target_cameras[0]
    hits = trace(scene, novel)
    return case_from_frame(angle, seq.input_cameras, seq.frames[0], novel, hits.index)


def case_from_frame(angle, cameras, frame, novel, labels=None):
    gt_depth = frame.groundtruth.depths[novel.id]
    if labels is None:
        labels = np.where(valid_depth(gt_depth), 0, -1)
    surface = (labels >= 0) & ~silhouette_band(labels, 2)
    return SlantInputs(angle, cameras, [frame.inputs.depths[c.id] for c in cameras],
                       [frame.inputs.colors[c.id] for c in cameras], novel,
                       frame.groundtruth.colors[novel.id], gt_depth, surface)


def evaluate_case(case: SlantInputs, options: RenderOptions = RenderOptions(), tol=COVERAGE_TOL):
    """Coverage and PSNR of both volume builders on one case.

    ``psnr_*`` is the foreground PSNR (pixels whose blend weight exceeds 0.5
    in that render); ``surface_psnr_*`` uses the shared ground-truth surface
    mask so both builders are scored on the same pixels.
    """
    row = {"angle": case.angle, "pixels": int(case.surface.sum())}
    for kind in ("mpc", "sweep"):
        opts = options.updated(volume=kind)
        out = render_view(case.cameras, case.depths, case.colors, case.novel, opts)
        for mode, prefix in (("nearest", "coverage"), ("extent", "extent_coverage")):
            row[f"{prefix}_{kind}"] = coverage_fraction(out.volume, None, case.novel, tol, case.surface, mode,
                                                       true_depth=case.gt_depth)
        fg = out.blend.foreground_mask
        row[f"psnr_{kind}"] = psnr(out.image, case.gt_color, fg) if fg.any() else math.nan
        row[f"surface_psnr_{kind}"] = psnr(out.image, case.gt_color, case.surface) if row["pixels"] else math.nan
    return row


def _run_angle(args):
    angle, sensor_dict, options_dict, width, height = args
    case = simulate_case(angle, SensorModel.from_dict(sensor_dict), width, height)
    return evaluate_case(case, RenderOptions.from_dict(options_dict))


def compare_sweep(angles=scenes.SLANT_ANGLES, sensor: SensorModel = None, options: RenderOptions = RenderOptions(),
                  jobs=1, width=scenes.WIDTH, height=scenes.HEIGHT):
    """Rows of :data:`COLUMNS`, one per angle, in the order given."""
    sensor = sensor or SensorModel.preset("default")
    tasks = [(a, sensor.to_dict(), options.to_dict(), width, height) for a in angles]
    if jobs <= 1:
        return [_run_angle(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_angle, tasks))


def summarize(rows, steep=80, min_gap=0.15, min_psnr_gap=1.0, column="coverage"):
    """Check the orderings expected of MPC versus the sweep.

    ``column`` selects nearest-candidate (``coverage``) or swept-extent
    (``extent_coverage``) coverage.
    """
    order = all(r[f"{column}_mpc"] >= r[f"{column}_sweep"] for r in rows)
    steep_rows = [r for r in rows if r["angle"] >= steep]
    gap = all(r[f"{column}_mpc"] - r[f"{column}_sweep"] >= min_gap for r in steep_rows)
    psnr_gap = all(r["psnr_mpc"] - r["psnr_sweep"] >= min_psnr_gap for r in steep_rows)
    return {"ordering": order, "steep_coverage_gap": gap, "steep_psnr_gap": psnr_gap,
            "failing_angles": [r["angle"] for r in rows if r[f"{column}_mpc"] < r[f"{column}_sweep"]]}
