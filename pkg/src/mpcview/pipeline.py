"""Per-view render pipeline: volume -> aggregate -> density -> sort/composite."""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .aggregate import DensityParams, aggregate_candidates, estimate_density
from .errors import ConfigError
from .render import composite, render_background, render_highres, sort_by_depth, volume_render
from .volume import DEFAULT_OFFSETS, SWEEP_PLANES, SWEEP_STEP, build_mpc, build_novel_view_sweep

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RenderOptions:
    volume: str = "mpc"
    offsets: tuple = DEFAULT_OFFSETS
    sweep_planes: int = SWEEP_PLANES
    sweep_step: float = SWEEP_STEP
    splat_radius: int = 1
    density: DensityParams = field(default_factory=DensityParams)
    highres: bool = False
    highres_splat_radius: int = 2
    window: int = 1
    sampling: str = "bilinear"
    fill: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.volume not in ("mpc", "sweep"):
            raise ConfigError(f"volume must be 'mpc' or 'sweep', got {self.volume!r}")
        if list(self.offsets) != sorted(self.offsets) or not self.offsets:
            raise ConfigError("offsets must be a non-empty ascending list")
        if self.sweep_planes < 1 or not self.sweep_step > 0:
            raise ConfigError("sweep needs at least one plane and a positive step")
        for r in (self.splat_radius, self.highres_splat_radius):
            if int(r) != r or r < 0:
                raise ConfigError("splat radii must be non-negative integers")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError("temporal window must be a positive odd integer")
        if self.sampling not in ("bilinear", "nearest"):
            raise ConfigError(f"unknown sampling {self.sampling!r}")

    def to_dict(self):
        d = asdict(self)
        d["offsets"] = list(self.offsets)
        d["fill"] = list(self.fill)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown render options: {sorted(unknown)}")
        d = dict(d)
        if "density" in d and isinstance(d["density"], dict):
            d["density"] = DensityParams(**d["density"])
        for key in ("offsets", "fill"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def updated(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


class PhaseTimer:
    """Accumulates wall time per named phase."""

    def __init__(self):
        self.totals = {}

    @contextmanager
    def phase(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] = self.totals.get(name, 0.0) + time.perf_counter() - start


@dataclass(eq=False)
class ViewRender:
    image: np.ndarray
    blend: object
    background: np.ndarray
    volume: object
    features: object
    costs: object
    density: object
    image_highres: np.ndarray = None
    blend_highres: object = None


def build_volume(options: RenderOptions, depths, cameras, novel, splat_radius=None):
    r = options.splat_radius if splat_radius is None else splat_radius
    if options.volume == "mpc":
        return build_mpc(depths, cameras, novel, options.offsets, r)
    return build_novel_view_sweep(depths, cameras, novel, options.sweep_planes, options.sweep_step, r)


def render_view(cameras, depths, colors, novel, options: RenderOptions = RenderOptions(),
                bg_depths=None, bg_colors=None, timer: PhaseTimer = None) -> ViewRender:
    """Full analytic render of one novel view from K RGBD inputs."""
    timer = timer or PhaseTimer()
    eps = options.density.eps_occ
    with timer.phase("volume"):
        vol = build_volume(options, depths, cameras, novel)
    with timer.phase("aggregate"):
        feats, costs = aggregate_candidates(vol, cameras, colors, depths, eps, options.sampling)
    with timer.phase("density"):
        sigma = estimate_density(feats, costs, options.density)
    with timer.phase("render"):
        blend = volume_render(sort_by_depth(vol, feats, sigma))
    with timer.phase("background"):
        bgd = render_background(bg_depths or [], cameras, novel, bg_colors or [], eps,
                                options.splat_radius, options.fill, options.sampling)
    image = composite(blend, bgd)
    out = ViewRender(image, blend, bgd, vol, feats, costs, sigma)
    if options.highres:
        hi = novel.scaled(2)
        with timer.phase("highres"):
            vol_hi = build_volume(options, depths, cameras, hi, options.highres_splat_radius)
            feats_hi, _ = aggregate_candidates(vol_hi, cameras, colors, depths, eps, options.sampling)
            bgd_hi = render_background(bg_depths or [], cameras, hi, bg_colors or [], eps,
                                       options.highres_splat_radius, options.fill, options.sampling)
            out.image_highres, out.blend_highres = render_highres(sigma, vol_hi, feats_hi, bgd_hi)
    return out
