"""Image fidelity, depth accuracy and temporal stability metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import RejectedInput
from .geometry import valid_depth

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_K1, SSIM_K2 = 0.01, 0.03

# Rec. 601 luma weights.
LUMA = np.array([0.299, 0.587, 0.114])


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise RejectedInput(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _pixel_mask(mask, shape):
    if mask is None:
        return np.ones(shape, bool)
    mask = np.asarray(mask, bool)
    if mask.shape != shape:
        raise RejectedInput(f"mask shape {mask.shape} does not match image {shape}")
    if not mask.any():
        raise RejectedInput("mask selects no pixels")
    return mask


def psnr(a, b, mask=None):
    """``10 log10(1 / MSE)`` over masked pixels; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    m = _pixel_mask(mask, a.shape[:2])
    diff = (a - b)[m]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(radius=SSIM_RADIUS, sigma=SSIM_SIGMA):
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter(img, g):
    # Separable correlation over the two spatial axes, valid region only.
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    r = len(g) // 2
    return out[r:-r or None, r:-r or None]


def ssim_map(a, b, data_range=1.0):
    """SSIM per valid window center (H-10, W-10), channel-averaged."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    g = gaussian_window()
    if a.shape[0] < len(g) or a.shape[1] < len(g):
        raise RejectedInput("images smaller than the 11x11 SSIM window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    maps = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter(x, g), _filter(y, g)
        sxx = _filter(x * x, g) - mx * mx
        syy = _filter(y * y, g) - my * my
        sxy = _filter(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        maps.append(num / den)
    return np.mean(maps, axis=0)


def ssim(a, b, mask=None):
    """Mean SSIM over window centers that fall inside ``mask``."""
    a, b = _pair(a, b)
    m = _pixel_mask(mask, a.shape[:2])
    smap = ssim_map(a, b)
    r = SSIM_RADIUS
    centers = m[r:-r, r:-r]
    if not centers.any():
        raise RejectedInput("mask selects no SSIM window centers")
    return float(smap[centers].mean())


def depth_mae(depth, gt, mask=None):
    depth, gt = _pair(depth, gt)
    ok = valid_depth(depth) & valid_depth(gt)
    if mask is not None:
        ok &= np.asarray(mask, bool)
    if not ok.any():
        raise RejectedInput("no jointly valid depth pixels")
    return float(np.abs(depth[ok] - gt[ok]).mean())


def luminance(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.shape[-1] == 3:
        return image @ LUMA
    return image.mean(axis=-1)


def flicker(frames, static_mask=None):
    """Mean temporal (population) std of luminance over static pixels."""
    if len(frames) < 2:
        raise RejectedInput("flicker needs at least two frames")
    lum = np.stack([luminance(f) for f in frames])
    m = _pixel_mask(static_mask, lum.shape[1:])
    return float(lum.std(axis=0)[m].mean())


def _band(cut_y, cut_x, shape, width):
    edge = np.zeros(shape, bool)
    edge[1:] |= cut_y
    edge[:-1] |= cut_y
    edge[:, 1:] |= cut_x
    edge[:, :-1] |= cut_x
    if width <= 1:
        return edge
    return ndimage.binary_dilation(edge, np.ones((2 * width - 1, 2 * width - 1), bool))


def silhouette_band(labels, width=2):
    """Pixels within ``width`` px (Chebyshev) of a change in ``labels``."""
    labels = np.asarray(labels)
    return _band(labels[1:] != labels[:-1], labels[:, 1:] != labels[:, :-1], labels.shape, width)


def discontinuity_band(depth, width=2, jump=0.02):
    """Silhouette band derived from a depth map alone.

    Neighbouring pixels belong to different surfaces when their depths differ
    by more than ``jump`` or only one of them is valid.
    """
    depth = np.asarray(depth, dtype=np.float64)
    ok = valid_depth(depth)
    d = np.where(ok, depth, 0.0)

    def cut(a, b, ea, eb):
        return (ea != eb) | (ea & eb & (np.abs(a - b) > jump))

    return _band(cut(d[1:], d[:-1], ok[1:], ok[:-1]), cut(d[:, 1:], d[:, :-1], ok[:, 1:], ok[:, :-1]),
                 depth.shape, width)


@dataclass
class MetricReport:
    """Metric values, each tagged with the mask it was computed under."""

    entries: list = field(default_factory=list)

    def add(self, metric, value, mask="all", **tags):
        self.entries.append({"metric": metric, "value": float(value), "mask": mask, **tags})
        return self

    def get(self, metric, mask="all", **tags):
        for e in self.entries:
            if e["metric"] == metric and e["mask"] == mask and all(e.get(k) == v for k, v in tags.items()):
                return e["value"]
        raise KeyError((metric, mask, tags))

    def to_json(self):
        return json.dumps([{k: _json_value(v) for k, v in e.items()} for e in self.entries], indent=2)

    def write_json(self, path):
        with open(path, "w") as f:
            f.write(self.to_json() + "\n")

    def write_csv(self, path):
        keys = []
        for e in self.entries:
            keys += [k for k in e if k not in keys]
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=keys)
            w.writeheader()
            for e in self.entries:
                w.writerow(e)


def _json_value(v):
    # JSON has no infinity; identical images are reported as the string "inf".
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def evaluate_view(image, gt, weight_map=None, depth=None, gt_depth=None, exclude=None, **tags):
    """Standard metric set for one rendered view.

    ``exclude`` removes pixels (e.g. a silhouette band) from every mask.
    Foreground variants use ``weight_map > 0.5``.
    """
    report = MetricReport()
    h, w = np.shape(gt)[:2]
    base = np.ones((h, w), bool) if exclude is None else ~np.asarray(exclude, bool)
    masks = {"all": base}
    if weight_map is not None:
        masks["foreground"] = base & (np.asarray(weight_map) > 0.5)
    for name, m in masks.items():
        if not m.any():
            continue
        report.add("psnr", psnr(image, gt, m), name, **tags)
        report.add("ssim", ssim(image, gt, m), name, **tags)
        if depth is not None and gt_depth is not None:
            ok = m & valid_depth(depth) & valid_depth(gt_depth)
            if ok.any():
                report.add("depth_mae", depth_mae(depth, gt_depth, ok), name, **tags)
    return report

