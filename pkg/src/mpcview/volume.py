"""Depth-candidate volumes in the novel view.

Two builders share one downstream interface:

* :func:`build_mpc` perturbs every input depth map along its own pixel rays
  by each offset, lifts and rasterizes the result into the novel view. Layers
  are ordered view-major, offset-minor.
* :func:`build_novel_view_sweep` rasterizes all views, averages them into a
  center depth and sweeps fronto-parallel planes around it along the novel
  camera's rays (the conventional cost-volume baseline).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import RejectedInput
from .geometry import CameraModel, PointCloud, lift_depth_map, rasterize, valid_depth
from .simulator import Scene, raycast_depth

DEFAULT_OFFSETS = (-0.01, 0.0, 0.01)
SWEEP_PLANES = 12
SWEEP_STEP = 0.01


class CandidateVolume:
    """Per-pixel depth candidates with provenance.

    Subclasses expose ``layers`` (L, H, W), ``layer_valid`` (L, H, W), the
    novel ``camera`` and ``groups``: lists of layer indices that were swept
    together (one per input view for MPC, a single group for a sweep).
    """

    camera: Optional[CameraModel]

    @property
    def layers(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def layer_valid(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def groups(self):
        raise NotImplementedError

    @property
    def num_layers(self):
        return self.layers.shape[0]

    @property
    def shape(self):
        return self.layers.shape[1:]

    def provenance(self, layer):
        raise NotImplementedError


@dataclass(eq=False)
class MpcDepthVolume(CandidateVolume):
    depths: np.ndarray  # (K, N, H, W), NaN where invalid
    offsets: tuple
    view_ids: tuple
    camera: Optional[CameraModel] = None

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64)
        if self.depths.ndim != 4:
            raise RejectedInput("MPC depths must be K x N x H x W")
        k, n = self.depths.shape[:2]
        if len(self.offsets) != n or len(self.view_ids) != k:
            raise RejectedInput("offsets / view_ids do not match the depth tensor")
        self.offsets = tuple(float(o) for o in self.offsets)
        self.view_ids = tuple(self.view_ids)

    @property
    def valid(self):
        return valid_depth(self.depths)

    @property
    def layers(self):
        k, n, h, w = self.depths.shape
        return self.depths.reshape(k * n, h, w)

    @property
    def layer_valid(self):
        return valid_depth(self.layers)

    @property
    def groups(self):
        n = len(self.offsets)
        return [list(range(k * n, (k + 1) * n)) for k in range(len(self.view_ids))]

    def provenance(self, layer):
        n = len(self.offsets)
        return {"view": self.view_ids[layer // n], "offset": self.offsets[layer % n]}


@dataclass(eq=False)
class SweepDepthVolume(CandidateVolume):
    center: np.ndarray  # (H, W)
    offsets: tuple
    step: float
    camera: Optional[CameraModel] = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.offsets = tuple(float(o) for o in self.offsets)
        d = self.center[None] + np.asarray(self.offsets)[:, None, None]
        ok = valid_depth(self.center)[None] & valid_depth(d)
        self.depths = np.where(ok, d, np.nan)

    @property
    def valid(self):
        return valid_depth(self.depths)

    @property
    def layers(self):
        return self.depths

    @property
    def layer_valid(self):
        return self.valid

    @property
    def groups(self):
        return [list(range(len(self.offsets)))]

    def provenance(self, layer):
        return {"layer": layer, "offset": self.offsets[layer]}


def sweep_offsets(num_planes, step):
    """Symmetric schedule ``(m - (M-1)/2) * step`` for m = 0..M-1."""
    m = np.arange(num_planes)
    return tuple((m - (num_planes - 1) / 2.0) * step)


def _check_inputs(input_depths, input_cameras):
    if len(input_depths) != len(input_cameras):
        raise RejectedInput(f"{len(input_depths)} depth maps for {len(input_cameras)} cameras")
    if not input_cameras:
        raise RejectedInput("at least one input view is required")
    for d, cam in zip(input_depths, input_cameras):
        if np.shape(d) != cam.shape:
            raise RejectedInput(f"depth map for {cam.id!r} is {np.shape(d)}, expected {cam.shape}")


def _perturbed(cloud: PointCloud, camera: CameraModel, delta):
    # Moving z-depth by delta moves the point by delta times its z=1 ray.
    rays = cloud.points - camera.center
    z = camera.world_to_camera(cloud.points)[:, 2]
    pts = cloud.points + rays * (delta / z)[:, None]
    return PointCloud(pts, cloud.pixel_index, cloud.view_index, cloud.view_ids)


def build_mpc(input_depths: Sequence, input_cameras: Sequence[CameraModel], novel: CameraModel,
              offsets=DEFAULT_OFFSETS, splat_radius=1) -> MpcDepthVolume:
    _check_inputs(input_depths, input_cameras)
    offsets = tuple(float(o) for o in offsets)
    if not offsets:
        raise RejectedInput("at least one offset is required")
    if any(b < a for a, b in zip(offsets, offsets[1:])):
        raise RejectedInput("offsets must be sorted ascending")
    h, w = novel.shape
    out = np.empty((len(input_cameras), len(offsets), h, w))
    for k, (depth, cam) in enumerate(zip(input_depths, input_cameras)):
        cloud = lift_depth_map(cam, depth)
        for n, delta in enumerate(offsets):
            layer = cloud if delta == 0 else _perturbed(cloud, cam, delta)
            out[k, n] = rasterize(layer, novel, splat_radius)
    return MpcDepthVolume(out, offsets, tuple(c.id for c in input_cameras), novel)


def rasterize_views(input_depths, input_cameras, novel, splat_radius=1):
    """Each input depth map lifted and rasterized into ``novel``; (K, H, W)."""
    _check_inputs(input_depths, input_cameras)
    return np.stack([rasterize(lift_depth_map(c, d), novel, splat_radius) for d, c in zip(input_depths, input_cameras)])


def build_novel_view_sweep(input_depths, input_cameras, novel: CameraModel, num_planes=SWEEP_PLANES,
                           step=SWEEP_STEP, splat_radius=1) -> SweepDepthVolume:
    if num_planes < 1:
        raise RejectedInput("num_planes must be at least 1")
    if not step > 0:
        raise RejectedInput("step must be positive")
    warped = rasterize_views(input_depths, input_cameras, novel, splat_radius)
    ok = valid_depth(warped)
    count = ok.sum(axis=0)
    total = np.where(ok, warped, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        center = np.where(count > 0, total / count, np.nan)
    return SweepDepthVolume(center, sweep_offsets(num_planes, step), float(step), novel)


def coverage_map(volume: CandidateVolume, true_depth, tol, mode="nearest"):
    """Per-pixel coverage of a true depth map by a candidate volume.

    ``nearest``: some valid candidate within ``tol`` of the true depth.
    ``extent``: the true depth lies within ``tol`` of the depth interval spanned
    by one group's valid candidates (the swept segment of one input view for
    MPC, the whole plane stack for a sweep).
    """
    if not tol > 0:
        raise RejectedInput("tol must be positive")
    true_depth = np.asarray(true_depth, dtype=np.float64)
    layers = volume.layers
    ok = volume.layer_valid
    if mode == "nearest":
        err = np.where(ok, np.abs(layers - true_depth[None]), np.inf)
        hit = (err <= tol).any(axis=0) if len(layers) else np.zeros(true_depth.shape, bool)
    elif mode == "extent":
        hit = np.zeros(true_depth.shape, bool)
        for g in volume.groups:
            lo = np.where(ok[g], layers[g], np.inf).min(axis=0)
            hi = np.where(ok[g], layers[g], -np.inf).max(axis=0)
            hit |= (true_depth >= lo - tol) & (true_depth <= hi + tol)
    else:
        raise RejectedInput(f"unknown coverage mode {mode!r}")
    return hit & valid_depth(true_depth)


def coverage_fraction(volume: CandidateVolume, scene: Scene, novel: CameraModel, tol, mask=None, mode="nearest", true_depth=None):
    """Fraction of pixels with a true surface hit that the volume covers.

    ``mask`` optionally restricts the pixels considered (e.g. a foreground
    object). The true depth comes from ray casting ``scene`` unless given.
    """
    if true_depth is None:
        true_depth = raycast_depth(scene, novel)
    considered = valid_depth(true_depth)
    if mask is not None:
        considered &= np.asarray(mask, bool)
    total = int(considered.sum())
    if total == 0 or volume.num_layers == 0:
        return 0.0
    hit = coverage_map(volume, true_depth, tol, mode)
    return float((hit & considered).sum()) / total
