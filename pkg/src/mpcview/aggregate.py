"""Occlusion-aware multi-view aggregation and density estimation.

Every valid candidate is unprojected from the novel view and projected into
each input view. A view contributes only if the candidate lands inside it and
is not behind that view's depth map by more than ``eps_occ``. The mean of the
contributing feature samples goes to the feature volume, their variance to
the cost volume.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, RejectedInput
from .geometry import CameraModel, project, sample_image, unproject
from .volume import CandidateVolume


@dataclass(eq=False)
class FeatureVolume:
    values: np.ndarray  # (L, H, W, F) float32, zero where view_count == 0
    view_count: np.ndarray  # (L, H, W) uint8

    @property
    def mask(self):
        return self.view_count > 0


@dataclass(eq=False)
class CostVolume:
    values: np.ndarray  # (L, H, W) float32, population variance averaged over channels
    view_count: np.ndarray  # (L, H, W) uint8

    @property
    def mask(self):
        """Where the variance is defined (two or more views)."""
        return self.view_count >= 2


@dataclass(eq=False)
class DensityVolume:
    values: np.ndarray  # (L, H, W) float32, >= 0


@dataclass(frozen=True)
class DensityParams:
    s: float = 10.0
    tau: float = 0.005
    min_views: int = 2
    eps_occ: float = 0.02

    def __post_init__(self):
        if not self.s > 0:
            raise ConfigError(f"density scale s must be positive, got {self.s}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if int(self.min_views) != self.min_views or self.min_views < 2:
            raise ConfigError(f"min_views must be an integer >= 2, got {self.min_views}")
        if not self.eps_occ > 0:
            raise ConfigError(f"eps_occ must be positive, got {self.eps_occ}")

    def to_dict(self):
        return asdict(self)


def gather_views(points, input_cameras: Sequence[CameraModel], input_features, input_depths, eps_occ, sampling="bilinear"):
    """Sample every input view at world ``points`` (P, 3).

    Returns ``(samples, visible)`` with shapes (K, P, F) and (K, P). Views are
    visited in the given order.
    """
    k_views = len(input_cameras)
    p = len(points)
    f = np.shape(input_features[0])[-1]
    samples = np.zeros((k_views, p, f))
    visible = np.zeros((k_views, p), bool)
    if p == 0:
        return samples, visible
    for k, (cam, feat, depth) in enumerate(zip(input_cameras, input_features, input_depths)):
        proj = project(cam, points)
        front = ~proj.behind
        u = np.where(front, proj.u, -1.0)
        v = np.where(front, proj.v, -1.0)
        stack = np.concatenate([np.asarray(depth, np.float64)[..., None], np.asarray(feat, np.float64)], axis=-1)
        vals, ok = sample_image(stack, u, v, sampling)
        with np.errstate(invalid="ignore"):
            vis = ok & front & (proj.z <= vals[:, 0] + eps_occ)
        visible[k] = vis
        samples[k] = np.where(vis[:, None], vals[:, 1:], 0.0)
    return samples, visible


def mean_and_variance(samples, visible):
    """Masked mean (P, F) and channel-averaged population variance (P,)."""
    count = visible.sum(axis=0)
    denom = np.maximum(count, 1)[:, None]
    mean = samples.sum(axis=0) / denom
    dev = np.where(visible[..., None], samples - mean[None], 0.0)
    var = (dev * dev).sum(axis=0) / denom
    return mean, var.mean(axis=-1), count


def aggregate_candidates(volume: CandidateVolume, input_cameras, input_features, input_depths,
                         eps_occ=0.02, sampling="bilinear"):
    """Build the feature and cost volumes for every candidate of ``volume``."""
    if not eps_occ > 0:
        raise RejectedInput("eps_occ must be positive")
    if not (len(input_cameras) == len(input_features) == len(input_depths)):
        raise RejectedInput("input cameras, features and depths must have equal length")
    if len(input_cameras) > 255:
        raise RejectedInput("at most 255 input views are supported")
    for cam, feat, depth in zip(input_cameras, input_features, input_depths):
        if np.shape(depth) != cam.shape or np.shape(feat)[:2] != cam.shape:
            raise RejectedInput(f"view {cam.id!r}: feature/depth size does not match its camera")
    novel = volume.camera
    layers, ok = volume.layers, volume.layer_valid
    nl, h, w = layers.shape
    f = np.shape(input_features[0])[-1]
    feats = np.zeros((nl, h, w, f), np.float32)
    costs = np.zeros((nl, h, w), np.float32)
    counts = np.zeros((nl, h, w), np.uint8)
    u_grid, v_grid = novel.pixel_grid()
    for layer in range(nl):
        m = ok[layer]
        if not m.any():
            continue
        pts = unproject(novel, u_grid[m], v_grid[m], layers[layer][m])
        samples, visible = gather_views(pts, input_cameras, input_features, input_depths, eps_occ, sampling)
        mean, var, count = mean_and_variance(samples, visible)
        feats[layer][m] = np.where(count[:, None] > 0, mean, 0.0)
        costs[layer][m] = np.where(count >= 2, var, 0.0)
        counts[layer][m] = count
    return FeatureVolume(feats, counts), CostVolume(costs, counts.copy())


class AnalyticDensity:
    """``sigma = s * exp(-C / tau)`` where at least ``min_views`` views agree; 0 elsewhere."""

    def __init__(self, params: DensityParams = DensityParams()):
        self.params = params

    def __call__(self, features: FeatureVolume, costs: CostVolume) -> DensityVolume:
        p = self.params
        usable = costs.view_count >= p.min_views
        sigma = np.where(usable, p.s * np.exp(-costs.values.astype(np.float64) / p.tau), 0.0)
        return DensityVolume(sigma.astype(np.float32))


def estimate_density(features: FeatureVolume, costs: CostVolume, params: DensityParams = None, estimator=None) -> DensityVolume:
    """Density slot of the pipeline; ``estimator`` replaces the analytic default."""
    if features.values.shape[:3] != costs.values.shape:
        raise RejectedInput("feature and cost volumes are not aligned")
    if estimator is None:
        estimator = AnalyticDensity(params or DensityParams())
    return estimator(features, costs)
