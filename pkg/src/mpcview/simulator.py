"""Synthetic RGBD rig: analytic ray casting plus a parametric depth sensor.

Scenes are lists of primitives (plane, sphere, box, disk) with optional
procedural textures. Ray casting returns camera-frame z-depth directly
because rays are parameterized with unit camera-frame z.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, RejectedInput
from .geometry import CameraModel, valid_depth

_EPS_T = 1e-9


@dataclass(frozen=True)
class Texture:
    """Procedural modulation of a primitive's albedo.

    ``kind`` is ``flat``, ``checker`` or ``sine``. The pattern value p in
    [0, 1] scales the albedo by ``1 - contrast * (1 - p)``.
    """

    kind: str = "flat"
    period: float = 0.05
    contrast: float = 0.5

    def __post_init__(self):
        if self.kind not in ("flat", "checker", "sine"):
            raise ConfigError(f"unknown texture kind {self.kind!r}")
        if self.kind != "flat" and not self.period > 0:
            raise ConfigError("texture period must be positive")
        if not 0 <= self.contrast <= 1:
            raise ConfigError("texture contrast must lie in [0, 1]")

    def pattern(self, coords):
        coords = np.asarray(coords, dtype=np.float64)
        if self.kind == "flat":
            return np.ones(coords.shape[:-1])
        if self.kind == "checker":
            cells = np.floor(coords / self.period).astype(np.int64).sum(axis=-1)
            return (cells % 2 == 0).astype(np.float64)
        phases = 1.1 * np.arange(coords.shape[-1])
        return 0.5 + 0.5 * np.mean(np.sin(2 * np.pi * coords / self.period + phases), axis=-1)

    def shade(self, albedo, coords):
        p = self.pattern(coords)
        return np.asarray(albedo)[None, :] * (1.0 - self.contrast * (1.0 - p))[..., None]


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not n > 0:
        raise ConfigError("direction vector must be non-zero")
    return v / n


def _plane_axes(normal, u_axis=None):
    if u_axis is None:
        ref = np.array([0.0, 1.0, 0.0]) if abs(normal[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(ref, normal)
    else:
        u = np.asarray(u_axis, dtype=np.float64)
        u = u - normal * (u @ normal)
    u = _unit(u)
    return u, np.cross(normal, u)


def _facing(normals, dirs):
    flip = np.einsum("ij,ij->i", normals, dirs) > 0
    return np.where(flip[:, None], -normals, normals)


@dataclass(frozen=True, eq=False)
class Primitive:
    albedo: tuple = (0.8, 0.8, 0.8)
    texture: Texture = field(default_factory=Texture)
    foreground: bool = True
    name: str = ""

    kind = "primitive"

    def intersect(self, origin, dirs):
        """Return (t, normal) per ray; t is inf on a miss, normals face the ray."""
        raise NotImplementedError

    def surface_coords(self, points):
        return points

    def color_at(self, points):
        return self.texture.shade(self.albedo, self.surface_coords(points))

    def translated(self, offset):
        raise NotImplementedError

    def _common(self):
        return {
            "kind": self.kind,
            "albedo": list(map(float, self.albedo)),
            "texture": {"kind": self.texture.kind, "period": self.texture.period, "contrast": self.texture.contrast},
            "foreground": bool(self.foreground),
            "name": self.name,
        }


@dataclass(frozen=True, eq=False)
class Plane(Primitive):
    """Plane through ``point``; a rectangle when ``half_extent`` is given."""

    point: tuple = (0.0, 0.0, 2.0)
    normal: tuple = (0.0, 0.0, -1.0)
    half_extent: Optional[tuple] = None
    u_axis: Optional[tuple] = None

    kind = "plane"

    def __post_init__(self):
        n = _unit(self.normal)
        object.__setattr__(self, "_n", n)
        object.__setattr__(self, "_p", np.asarray(self.point, dtype=np.float64))
        object.__setattr__(self, "_axes", _plane_axes(n, self.u_axis))
        if self.half_extent is not None and not all(e > 0 for e in self.half_extent):
            raise ConfigError("plane half_extent must be positive")

    def intersect(self, origin, dirs):
        denom = dirs @ self._n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self._p - origin) @ self._n) / denom
        t = np.where(np.isfinite(t) & (t > _EPS_T), t, np.inf)
        if self.half_extent is not None:
            hit = np.isfinite(t)
            pts = origin + dirs * np.where(hit, t, 0.0)[:, None]
            s = self.surface_coords(pts)
            inside = (np.abs(s[:, 0]) <= self.half_extent[0]) & (np.abs(s[:, 1]) <= self.half_extent[1])
            t = np.where(hit & inside, t, np.inf)
        return t, _facing(np.broadcast_to(self._n, dirs.shape).copy(), dirs)

    def surface_coords(self, points):
        d = np.asarray(points) - self._p
        return np.stack([d @ self._axes[0], d @ self._axes[1]], axis=-1)

    def translated(self, offset):
        return replace(self, point=tuple(self._p + offset))

    def to_dict(self):
        d = self._common()
        d.update(point=list(self._p), normal=list(self._n))
        if self.half_extent is not None:
            d["half_extent"] = list(self.half_extent)
        if self.u_axis is not None:
            d["u_axis"] = list(self.u_axis)
        return d


@dataclass(frozen=True, eq=False)
class Disk(Plane):
    radius: float = 0.2

    kind = "disk"

    def __post_init__(self):
        super().__post_init__()
        if not self.radius > 0:
            raise ConfigError("disk radius must be positive")

    def intersect(self, origin, dirs):
        t, n = Plane.intersect(replace(self, half_extent=None), origin, dirs)
        hit = np.isfinite(t)
        pts = origin + dirs * np.where(hit, t, 0.0)[:, None]
        r = np.linalg.norm(pts - self._p, axis=-1)
        return np.where(hit & (r <= self.radius), t, np.inf), n

    def to_dict(self):
        d = super().to_dict()
        d["radius"] = self.radius
        return d


@dataclass(frozen=True, eq=False)
class Sphere(Primitive):
    center: tuple = (0.0, 0.0, 2.0)
    radius: float = 0.5

    kind = "sphere"

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError("sphere radius must be positive")
        object.__setattr__(self, "_c", np.asarray(self.center, dtype=np.float64))

    def intersect(self, origin, dirs):
        oc = origin - self._c
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - root) / a
        t1 = (-b + root) / a
        t = np.where(t0 > _EPS_T, t0, t1)
        t = np.where((disc >= 0) & (t > _EPS_T), t, np.inf)
        pts = origin + dirs * np.where(np.isfinite(t), t, 0.0)[:, None]
        n = (pts - self._c) / self.radius
        return t, _facing(n, dirs)

    def translated(self, offset):
        return replace(self, center=tuple(self._c + offset))

    def to_dict(self):
        d = self._common()
        d.update(center=list(self._c), radius=self.radius)
        return d


@dataclass(frozen=True, eq=False)
class Box(Primitive):
    """Oriented box; ``rotation`` maps box axes to world (row-major 3x3)."""

    center: tuple = (0.0, 0.0, 2.0)
    half_size: tuple = (0.2, 0.2, 0.2)
    rotation: Optional[tuple] = None

    kind = "box"

    def __post_init__(self):
        if not all(s > 0 for s in self.half_size):
            raise ConfigError("box half_size must be positive")
        rot = np.eye(3) if self.rotation is None else np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        object.__setattr__(self, "_c", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "_r", rot)
        object.__setattr__(self, "_h", np.asarray(self.half_size, dtype=np.float64))

    def intersect(self, origin, dirs):
        o = (origin - self._c) @ self._r
        d = dirs @ self._r
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-self._h - o) * inv
            t2 = (self._h - o) * inv
        # Rays parallel to a slab: inside -> unbounded, outside -> miss.
        par = d == 0
        inside = np.abs(o) <= self._h
        lo = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        hi = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        axis = np.argmax(lo, axis=1)
        tn = lo.max(axis=1)
        tf = hi.min(axis=1)
        hit = (tn <= tf) & (tf > _EPS_T)
        t = np.where(hit, np.where(tn > _EPS_T, tn, tf), np.inf)
        local = np.zeros_like(d)
        local[np.arange(len(d)), axis] = 1.0
        return t, _facing(local @ self._r.T, dirs)

    def surface_coords(self, points):
        return (np.asarray(points) - self._c) @ self._r

    def translated(self, offset):
        return replace(self, center=tuple(self._c + offset))

    def to_dict(self):
        d = self._common()
        d.update(center=list(self._c), half_size=list(self._h))
        if self.rotation is not None:
            d["rotation"] = list(np.asarray(self.rotation, dtype=float).ravel())
        return d


_KINDS = {"plane": Plane, "disk": Disk, "sphere": Sphere, "box": Box}


def primitive_from_dict(d):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _KINDS:
        raise ConfigError(f"unknown primitive kind {kind!r}")
    if "texture" in d:
        d["texture"] = Texture(**d["texture"])
    for key in ("albedo", "point", "normal", "half_extent", "u_axis", "center", "half_size", "rotation"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    try:
        return _KINDS[kind](**d)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} parameters: {exc}") from None


@dataclass(frozen=True, eq=False)
class Scene:
    primitives: tuple = ()
    background: Optional[Plane] = None
    miss_color: tuple = (0.0, 0.0, 0.0)
    light: Optional[tuple] = None
    ambient: float = 0.3

    def all_primitives(self, foreground=True):
        prims = [p for p in self.primitives if foreground or not p.foreground]
        if self.background is not None:
            prims.append(self.background)
        return prims

    def without_foreground(self, extra=()):
        keep = tuple(p for i, p in enumerate(self.primitives) if not p.foreground and i not in extra)
        return replace(self, primitives=keep)

    def to_dict(self):
        d = {
            "primitives": [p.to_dict() for p in self.primitives],
            "miss_color": list(self.miss_color),
            "ambient": self.ambient,
        }
        if self.background is not None:
            d["background"] = self.background.to_dict()
        if self.light is not None:
            d["light"] = list(self.light)
        return d

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, d):
        bg = d.get("background")
        return cls(
            primitives=tuple(primitive_from_dict(p) for p in d.get("primitives", [])),
            background=primitive_from_dict(bg) if bg else None,
            miss_color=tuple(d.get("miss_color", (0.0, 0.0, 0.0))),
            light=tuple(d["light"]) if d.get("light") is not None else None,
            ambient=float(d.get("ambient", 0.3)),
        )


@dataclass
class Hits:
    depth: np.ndarray  # (H, W), inf on miss
    normal: np.ndarray  # (H, W, 3), facing the camera
    index: np.ndarray  # (H, W) primitive index into the traced list, -1 on miss
    points: np.ndarray  # (H, W, 3)
    dirs: np.ndarray  # (H, W, 3), camera z = 1
    primitives: list


def trace(scene: Scene, camera: CameraModel, foreground=True) -> Hits:
    prims = scene.all_primitives(foreground)
    h, w = camera.shape
    dirs = camera.ray_directions().reshape(-1, 3)
    origin = camera.center
    best = np.full(len(dirs), np.inf)
    normal = np.zeros_like(dirs)
    index = np.full(len(dirs), -1, dtype=np.int64)
    for i, prim in enumerate(prims):
        t, n = prim.intersect(origin, dirs)
        closer = t < best
        best = np.where(closer, t, best)
        normal[closer] = n[closer]
        index[closer] = i
    pts = origin + dirs * np.where(np.isfinite(best), best, 0.0)[:, None]
    return Hits(best.reshape(h, w), normal.reshape(h, w, 3), index.reshape(h, w), pts.reshape(h, w, 3), dirs.reshape(h, w, 3), prims)


def raycast_depth(scene: Scene, camera: CameraModel, foreground=True):
    """Camera-frame depth of the nearest surface per pixel; NaN on a miss."""
    hits = trace(scene, camera, foreground)
    return np.where(np.isfinite(hits.depth), hits.depth, np.nan)


def render_color(scene: Scene, camera: CameraModel, foreground=True, hits: Hits = None):
    """Albedo (optionally Lambert-shaded) of the nearest primitive; miss color elsewhere."""
    if hits is None:
        hits = trace(scene, camera, foreground)
    h, w = camera.shape
    out = np.empty((h * w, 3))
    out[:] = scene.miss_color
    idx = hits.index.ravel()
    pts = hits.points.reshape(-1, 3)
    for i, prim in enumerate(hits.primitives):
        m = idx == i
        if m.any():
            out[m] = prim.color_at(pts[m])
    if scene.light is not None:
        light = _unit(scene.light)
        lam = np.clip(-(hits.normal.reshape(-1, 3) @ light), 0.0, 1.0)
        shade = scene.ambient + (1.0 - scene.ambient) * lam
        out = np.where((idx >= 0)[:, None], out * shade[:, None], out)
    return out.reshape(h, w, 3)


def incidence_angles(hits: Hits):
    """Angle between each hit's surface normal and the direction back to the camera."""
    d = hits.dirs / np.linalg.norm(hits.dirs, axis=-1, keepdims=True)
    cos = np.abs(np.einsum("...i,...i->...", d, hits.normal))
    return np.arccos(np.clip(cos, 0.0, 1.0))


@dataclass(frozen=True)
class SensorModel:
    """Additive depth bias plus per-frame Gaussian noise.

    ``bias(depth, incidence) = const + interp(depth; depth_knots) +
    interp(incidence; angle_knots)``, clipped to ``±max_bias``. Knot tables are
    ``(xs, ys)`` pairs evaluated piecewise-linearly with end clamping.
    """

    bias_const: float = 0.0
    depth_knots: tuple = ()
    angle_knots: tuple = ()
    max_bias: float = 0.05
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if not self.max_bias >= 0:
            raise ConfigError("max_bias must be non-negative")
        for knots in (self.depth_knots, self.angle_knots):
            if knots and (len(knots) != 2 or len(knots[0]) != len(knots[1]) or np.any(np.diff(knots[0]) <= 0)):
                raise ConfigError("bias knots must be (xs, ys) with strictly increasing xs")

    @classmethod
    def identity(cls, seed=0):
        return cls(seed=seed)

    @classmethod
    def preset(cls, name="default", **overrides):
        if name not in PRESETS:
            raise ConfigError(f"unknown sensor preset {name!r}")
        return replace(PRESETS[name], **overrides)

    def bias(self, depth, incidence):
        depth = np.asarray(depth, dtype=np.float64)
        b = np.full(depth.shape, float(self.bias_const))
        if self.depth_knots:
            b = b + np.interp(depth, *self.depth_knots)
        if self.angle_knots:
            b = b + np.interp(incidence, *self.angle_knots)
        return np.clip(b, -self.max_bias, self.max_bias)

    def noise(self, view_id, t, shape):
        if self.noise_sigma == 0:
            return np.zeros(shape)
        key = [int(self.seed) & 0xFFFFFFFF, zlib.crc32(str(view_id).encode()), int(t) + 1]
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
        return rng.standard_normal(shape) * self.noise_sigma

    def to_dict(self):
        return {
            "bias_const": self.bias_const,
            "depth_knots": [list(k) for k in self.depth_knots],
            "angle_knots": [list(k) for k in self.angle_knots],
            "max_bias": self.max_bias,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "preset" in d:
            base = cls.preset(d.pop("preset"))
            return replace(base, **{k: _knots(v) if k.endswith("_knots") else v for k, v in d.items()})
        for k in ("depth_knots", "angle_knots"):
            if k in d:
                d[k] = _knots(d[k])
        return cls(**d)


def _knots(v):
    return tuple(tuple(float(x) for x in row) for row in v) if v else ()


# Frame index reserved for the background pre-capture noise stream.
BACKGROUND_FRAME = -1

PRESETS = {
    "identity": SensorModel(),
    "default": SensorModel(
        bias_const=0.009,
        angle_knots=((0.0, np.pi / 2), (0.0, 0.00075)),
        max_bias=0.05,
        noise_sigma=0.0,
    ),
    "strong": SensorModel(
        bias_const=0.015,
        angle_knots=((0.0, np.pi / 2), (0.0, 0.0075)),
        max_bias=0.05,
    ),
}


def apply_sensor(depth_gt, camera: CameraModel, scene: Scene, sensor: SensorModel, t: int, foreground=True, incidence=None):
    """Biased, noisy sensor reading of a clean depth map.

    Adding to z-depth moves the lifted point along the camera's own pixel ray.
    Invalid pixels pass through unchanged.
    """
    depth_gt = np.asarray(depth_gt, dtype=np.float64)
    if incidence is None:
        incidence = incidence_angles(trace(scene, camera, foreground))
    ok = valid_depth(depth_gt)
    out = depth_gt.copy()
    bias = sensor.bias(np.where(ok, depth_gt, 0.0), incidence)
    noise = sensor.noise(camera.id, t, depth_gt.shape)
    out[ok] = depth_gt[ok] + bias[ok] + noise[ok]
    return out


@dataclass(frozen=True)
class Motion:
    """Constant-velocity translation of one primitive (meters per frame)."""

    primitive: int
    velocity: tuple

    def scene_at(self, scene: Scene, t: int) -> Scene:
        prims = list(scene.primitives)
        prims[self.primitive] = prims[self.primitive].translated(np.asarray(self.velocity, dtype=np.float64) * t)
        return replace(scene, primitives=tuple(prims))


@dataclass
class Bundle:
    """Per-view depth and color keyed by camera id."""

    depths: dict = field(default_factory=dict)
    colors: dict = field(default_factory=dict)


@dataclass
class Frame:
    t: int
    inputs: Bundle
    groundtruth: Bundle


@dataclass
class FrameSequence:
    rig: list
    frames: list
    background: Optional[Bundle] = None
    meta: dict = field(default_factory=dict)

    @property
    def input_cameras(self):
        return [c for c in self.rig if c.role == "input"]

    @property
    def target_cameras(self):
        return [c for c in self.rig if c.role != "input"]


def capture_view(scene, camera, sensor, t, foreground=True):
    """(depth, color) for one view; sensor applied only to input cameras."""
    hits = trace(scene, camera, foreground)
    depth = np.where(np.isfinite(hits.depth), hits.depth, np.nan)
    color = render_color(scene, camera, hits=hits)
    if camera.role == "input" and sensor is not None:
        depth = apply_sensor(depth, camera, scene, sensor, t, incidence=incidence_angles(hits))
    return depth, color


def capture_sequence(scene: Scene, rig, sensor: SensorModel, num_frames: int, motion: Optional[Motion] = None) -> FrameSequence:
    if not rig:
        raise RejectedInput("rig must contain at least one camera")
    if num_frames < 1:
        raise RejectedInput("num_frames must be at least 1")
    inputs = [c for c in rig if c.role == "input"]
    targets = [c for c in rig if c.role != "input"]

    moving = () if motion is None else (motion.primitive,)
    bg_scene = scene.without_foreground(moving)
    background = Bundle()
    for cam in inputs:
        d, c = capture_view(bg_scene, cam, sensor, BACKGROUND_FRAME)
        background.depths[cam.id], background.colors[cam.id] = d, c

    frames = []
    for t in range(num_frames):
        sc = scene if motion is None else motion.scene_at(scene, t)
        fin, fgt = Bundle(), Bundle()
        for cam in inputs:
            fin.depths[cam.id], fin.colors[cam.id] = capture_view(sc, cam, sensor, t)
        for cam in targets:
            fgt.depths[cam.id], fgt.colors[cam.id] = capture_view(sc, cam, None, t)
        frames.append(Frame(t, fin, fgt))
    meta = {"num_frames": num_frames, "seed": sensor.seed, "scene_hash": scene.digest()}
    return FrameSequence(list(rig), frames, background, meta)
