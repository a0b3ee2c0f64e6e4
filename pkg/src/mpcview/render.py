"""Depth sorting, volumetric compositing, background warping and temporal averaging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aggregate import DensityVolume, FeatureVolume, gather_views, mean_and_variance
from .errors import RejectedInput
from .geometry import CameraModel, PointCloud, lift_depth_map, rasterize, unproject, valid_depth
from .volume import CandidateVolume


@dataclass(eq=False)
class SortedVolumes:
    order: np.ndarray  # (L, H, W) candidate index per sorted slot
    depths: np.ndarray  # (L, H, W), NaN on the invalid tail
    features: np.ndarray  # (L, H, W, F)
    sigma: np.ndarray  # (L, H, W), 0 on the invalid tail
    num_valid: np.ndarray  # (H, W)


@dataclass(eq=False)
class BlendResult:
    feature_image: np.ndarray  # (H, W, F), premultiplied
    weight_map: np.ndarray  # (H, W)
    residual: np.ndarray  # (H, W) transmittance left after the last candidate
    peak_depth: np.ndarray  # (H, W) depth of the highest-weight candidate, NaN if none

    @property
    def foreground_mask(self):
        return self.weight_map > 0.5


def _candidate_arrays(volume):
    if isinstance(volume, CandidateVolume):
        return volume.layers, volume.layer_valid
    layers = np.asarray(volume, dtype=np.float64)
    return layers, valid_depth(layers)


def sort_by_depth(volume, features: FeatureVolume, density: DensityVolume) -> SortedVolumes:
    """Stable per-pixel ascending sort; invalid candidates go last with zero density."""
    depths, ok = _candidate_arrays(volume)
    feats = features.values if isinstance(features, FeatureVolume) else np.asarray(features)
    sigma = density.values if isinstance(density, DensityVolume) else np.asarray(density)
    if feats.shape[:3] != depths.shape or sigma.shape != depths.shape:
        raise RejectedInput("depth, feature and density volumes are not aligned")
    key = np.where(ok, depths, np.inf)
    order = np.argsort(key, axis=0, kind="stable")
    sorted_ok = np.take_along_axis(ok, order, axis=0)
    return SortedVolumes(
        order=order,
        depths=np.where(sorted_ok, np.take_along_axis(depths, order, axis=0), np.nan),
        features=np.take_along_axis(feats, order[..., None], axis=0),
        sigma=np.where(sorted_ok, np.take_along_axis(sigma, order, axis=0), 0.0),
        num_valid=ok.sum(axis=0),
    )


def volume_render(sorted_volumes: SortedVolumes) -> BlendResult:
    """Front-to-back compositing of the sorted candidates.

    ``T_i = exp(-sum_{j<i} sigma_j)``, ``alpha_i = 1 - exp(-sigma_i)``; the
    image is ``sum T_i alpha_i f_i`` and the weight map ``sum T_i alpha_i``.
    """
    sigma = np.asarray(sorted_volumes.sigma, dtype=np.float64)
    acc = np.cumsum(sigma, axis=0)
    trans = np.exp(-(acc - sigma))
    alpha = -np.expm1(-sigma)
    weights = trans * alpha
    feats = np.asarray(sorted_volumes.features, dtype=np.float64)
    image = np.einsum("lhw,lhwf->hwf", weights, feats)
    weight_map = weights.sum(axis=0)
    residual = np.exp(-acc[-1]) if len(sigma) else np.ones(sigma.shape[1:])
    if len(sigma):
        peak = np.argmax(weights, axis=0)
        peak_depth = np.take_along_axis(sorted_volumes.depths, peak[None], axis=0)[0]
        peak_depth = np.where(weights.max(axis=0) > 0, peak_depth, np.nan)
    else:
        peak_depth = np.full(sigma.shape[1:], np.nan)
    return BlendResult(image, weight_map, residual, peak_depth)


def render_background(bg_depths, input_cameras: Sequence[CameraModel], novel: CameraModel, input_features,
                      eps_occ=0.02, splat_radius=1, fill=(0.0, 0.0, 0.0), sampling="bilinear"):
    """Warp background-only captures into the novel view.

    All background depth maps are merged into one cloud and rasterized; each
    covered pixel averages the feature samples of the views that see it.
    Uncovered pixels get ``fill``.
    """
    h, w = novel.shape
    fill = np.asarray(fill, dtype=np.float64)
    out = np.broadcast_to(fill, (h, w, fill.size)).copy()
    if not bg_depths:
        return out
    cloud = PointCloud.concat([lift_depth_map(c, d) for d, c in zip(bg_depths, input_cameras)])
    depth = rasterize(cloud, novel, splat_radius)
    m = valid_depth(depth)
    if not m.any():
        return out
    u, v = novel.pixel_grid()
    pts = unproject(novel, u[m], v[m], depth[m])
    samples, visible = gather_views(pts, input_cameras, input_features, bg_depths, eps_occ, sampling)
    mean, _, count = mean_and_variance(samples, visible)
    vals = out[m]
    seen = count > 0
    vals[seen] = mean[seen]
    out[m] = vals
    return out


def composite(fgd: BlendResult, bgd) -> np.ndarray:
    """Over-composite the premultiplied foreground onto the background."""
    bgd = np.asarray(bgd, dtype=np.float64)
    if bgd.shape != fgd.feature_image.shape:
        raise RejectedInput(f"background {bgd.shape} does not match foreground {fgd.feature_image.shape}")
    return fgd.feature_image + (1.0 - fgd.weight_map)[..., None] * bgd


def upsample2x(values):
    """Bilinear 2x spatial upsampling of (..., H, W) with pixel-center alignment."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape[-2:]

    def axis_weights(n):
        x = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
        x = np.clip(x, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(x).astype(np.intp), max(n - 2, 0))
        i1 = np.minimum(i0 + 1, n - 1)
        return i0, i1, x - i0

    y0, y1, fy = axis_weights(h)
    x0, x1, fx = axis_weights(w)
    rows = values[..., y0, :] * (1 - fy)[:, None] + values[..., y1, :] * fy[:, None]
    return rows[..., x0] * (1 - fx) + rows[..., x1] * fx


def render_highres(density_low: DensityVolume, depth_high: CandidateVolume, features_high: FeatureVolume, bgd_high):
    """Render at 2x using bilinearly upsampled low-resolution density.

    Returns ``(image, blend)``: the composited high-resolution feature image
    and the high-resolution :class:`BlendResult`.
    """
    sigma_low = density_low.values if isinstance(density_low, DensityVolume) else np.asarray(density_low)
    layers, ok = _candidate_arrays(depth_high)
    if layers.shape[0] != sigma_low.shape[0]:
        raise RejectedInput("high- and low-resolution volumes have different layer counts")
    if layers.shape[1:] != (2 * sigma_low.shape[1], 2 * sigma_low.shape[2]):
        raise RejectedInput(f"high-resolution volume {layers.shape[1:]} is not 2x of {sigma_low.shape[1:]}")
    sigma_high = np.where(ok, upsample2x(sigma_low), 0.0)
    blend = volume_render(sort_by_depth(depth_high, features_high, sigma_high))
    return composite(blend, bgd_high), blend


def temporal_average(frames: Sequence[np.ndarray], window: int = 3):
    """Centered moving average over frames; windows are truncated at the ends."""
    if window < 1 or window % 2 == 0:
        raise RejectedInput(f"window must be a positive odd integer, got {window}")
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if window == 1:
        return [f.copy() for f in frames]
    half = window // 2
    stack = np.stack(frames)
    return [stack[max(0, t - half): t + half + 1].mean(axis=0) for t in range(len(frames))]
