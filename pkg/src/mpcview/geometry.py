"""Pinhole cameras, projection, depth-map lifting and point rasterization.

Conventions used throughout the package:

* Poses are camera-to-world: ``X_world = R @ X_cam + t``.
* Depth is camera-frame z, not ray length.
* Pixel ``(i, j)`` (column, row) has its center at continuous coordinates
  ``(i + 0.5, j + 0.5)``; a continuous position ``(u, v)`` falls in pixel
  ``(floor(u), floor(v))``.
* Invalid depth is NaN. Anything non-finite or ``<= 0`` reads as invalid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import RejectedInput

INVALID = np.nan
ROTATION_TOL = 1e-6


def valid_depth(depth):
    """Boolean mask of usable depth values."""
    depth = np.asarray(depth)
    with np.errstate(invalid="ignore"):
        return np.isfinite(depth) & (depth > 0)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise RejectedInput(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise RejectedInput("image size must be integral")
        if self.width <= 0 or self.height <= 0:
            raise RejectedInput("image size must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise RejectedInput(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def shape(self):
        return (int(self.height), int(self.width))

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: int) -> "Intrinsics":
        # Exact under the pixel-center convention: center (i+0.5)/s maps to s*(i+0.5).
        return Intrinsics(
            self.fx * factor,
            self.fy * factor,
            self.cx * factor,
            self.cy * factor,
            int(self.width * factor),
            int(self.height * factor),
        )


def _check_rotation(rotation, tol=ROTATION_TOL):
    err = np.abs(rotation.T @ rotation - np.eye(3)).max()
    if not np.isfinite(err) or err > tol:
        raise RejectedInput(f"rotation is not orthonormal (max deviation {err:.3g})")
    det = np.linalg.det(rotation)
    if abs(det - 1.0) > tol:
        raise RejectedInput(f"rotation determinant is {det:.6g}, expected +1")


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid camera-to-world transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(translation)):
            raise RejectedInput("translation must be finite")
        _check_rotation(rotation)
        rotation.flags.writeable = False
        translation.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, -1.0, 0.0)):
        """Camera at ``eye`` with its +z axis toward ``target``.

        The default ``up`` makes image rows grow along world +y, so the
        identity pose is what ``look_at((0,0,0), (0,0,1))`` returns.
        """
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        norm = np.linalg.norm(x)
        if norm < 1e-12:
            raise RejectedInput("up vector is parallel to the viewing direction")
        x /= norm
        y = np.cross(z, x)
        return cls(np.stack([x, y, z], axis=1), eye)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def to_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True, eq=False)
class CameraModel:
    intrinsics: Intrinsics
    pose: Pose = field(default_factory=Pose.identity)
    id: str = "cam"
    role: str = "input"

    @property
    def shape(self):
        return self.intrinsics.shape

    @property
    def center(self):
        return self.pose.translation

    def world_to_camera(self, points):
        points = np.asarray(points, dtype=np.float64)
        return (points - self.pose.translation) @ self.pose.rotation

    def camera_to_world(self, points):
        return self.pose.apply(points)

    def scaled(self, factor: int) -> "CameraModel":
        return CameraModel(self.intrinsics.scaled(factor), self.pose, self.id, self.role)

    def with_id(self, id, role=None) -> "CameraModel":
        return CameraModel(self.intrinsics, self.pose, id, self.role if role is None else role)

    def pixel_grid(self):
        """Continuous (u, v) coordinates of every pixel center, each (H, W)."""
        h, w = self.shape
        u, v = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
        return u, v

    def ray_directions(self):
        """World-space ray directions for every pixel, scaled so camera z = 1.

        A point at parameter ``t`` along such a ray has camera-frame depth ``t``.
        """
        k = self.intrinsics
        u, v = self.pixel_grid()
        cam = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
        return cam @ self.pose.rotation.T


class Projection(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    behind: np.ndarray


def project(camera: CameraModel, points) -> Projection:
    """Project world points; ``behind`` flags z <= 0 (their u, v are NaN)."""
    points = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(points)):
        raise RejectedInput("points must be finite")
    cam = camera.world_to_camera(points)
    x, y, z = cam[..., 0], cam[..., 1], cam[..., 2]
    behind = z <= 0
    k = camera.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(behind, np.nan, k.fx * x / z + k.cx)
        v = np.where(behind, np.nan, k.fy * y / z + k.cy)
    return Projection(u, v, z, behind)


def unproject(camera: CameraModel, u, v, depth):
    """World point(s) seen at continuous pixel (u, v) with camera-frame depth."""
    depth = np.asarray(depth, dtype=np.float64)
    if not np.all(valid_depth(depth)):
        raise RejectedInput("unproject requires finite, positive depth")
    k = camera.intrinsics
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cam = np.stack(np.broadcast_arrays((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth), axis=-1)
    return camera.camera_to_world(cam)


@dataclass(eq=False)
class PointCloud:
    """World points with the flat source-pixel index and source view they came from."""

    points: np.ndarray
    pixel_index: np.ndarray
    view_index: np.ndarray
    view_ids: tuple = ()

    def __len__(self):
        return len(self.points)

    def source_views(self):
        return [self.view_ids[i] for i in self.view_index]

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros(0, np.int64), ())

    @classmethod
    def concat(cls, clouds: Sequence["PointCloud"]) -> "PointCloud":
        if not clouds:
            return cls.empty()
        ids, remapped = [], []
        for c in clouds:
            lut = []
            for vid in c.view_ids:
                if vid not in ids:
                    ids.append(vid)
                lut.append(ids.index(vid))
            lut = np.asarray(lut, dtype=np.int64)
            remapped.append(lut[c.view_index] if len(c) else np.zeros(0, np.int64))
        return cls(
            np.concatenate([c.points for c in clouds]),
            np.concatenate([c.pixel_index for c in clouds]),
            np.concatenate(remapped),
            tuple(ids),
        )


def lift_depth_map(camera: CameraModel, depth) -> PointCloud:
    """One world point per valid pixel, unprojected at the pixel center."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != camera.shape:
        raise RejectedInput(f"depth map is {depth.shape}, camera {camera.id!r} expects {camera.shape}")
    ok = valid_depth(depth)
    rows, cols = np.nonzero(ok)
    pts = unproject(camera, cols + 0.5, rows + 0.5, depth[rows, cols])
    pix = rows.astype(np.int64) * depth.shape[1] + cols
    return PointCloud(pts.reshape(-1, 3), pix, np.zeros(len(pix), np.int64), (camera.id,))


def rasterize(cloud: PointCloud, camera: CameraModel, splat_radius: int = 1, return_index: bool = False):
    """Z-buffer a point cloud into ``camera``.

    Each point covers every pixel within Chebyshev distance ``splat_radius``
    of the pixel it lands in; the nearest depth wins. Uncovered pixels are NaN.
    With ``return_index`` also returns, per pixel, the index of the winning
    point (-1 if none; ties go to the lowest index).
    """
    if int(splat_radius) != splat_radius or splat_radius < 0:
        raise RejectedInput(f"splat_radius must be a non-negative integer, got {splat_radius}")
    splat_radius = int(splat_radius)
    h, w = camera.shape
    zbuf = np.full(h * w, np.inf)
    if len(cloud):
        proj = project(camera, cloud.points)
        ok = ~proj.behind
        src = np.nonzero(ok)[0]
        px = np.floor(proj.u[ok]).astype(np.int64)
        py = np.floor(proj.v[ok]).astype(np.int64)
        z = proj.z[ok]
        # Drop points whose footprint cannot touch the image before expanding.
        near = (px >= -splat_radius) & (px < w + splat_radius) & (py >= -splat_radius) & (py < h + splat_radius)
        src, px, py, z = src[near], px[near], py[near], z[near]
        r = np.arange(-splat_radius, splat_radius + 1)
        dx, dy = np.meshgrid(r, r)
        qx = (px[:, None] + dx.ravel()).ravel()
        qy = (py[:, None] + dy.ravel()).ravel()
        qz = np.repeat(z, dx.size)
        qs = np.repeat(src, dx.size)
        inb = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
        lin = qy[inb] * w + qx[inb]
        qz, qs = qz[inb], qs[inb]
        np.minimum.at(zbuf, lin, qz)
    depth = np.where(np.isfinite(zbuf), zbuf, INVALID).reshape(h, w)
    if not return_index:
        return depth
    winner = np.full(h * w, np.iinfo(np.int64).max, dtype=np.int64)
    if len(cloud):
        hit = qz == zbuf[lin]
        np.minimum.at(winner, lin[hit], qs[hit])
    winner[winner == np.iinfo(np.int64).max] = -1
    return depth, winner.reshape(h, w)


def sample_image(image, u, v, mode="bilinear"):
    """Sample ``image`` (H, W) or (H, W, C) at continuous pixel positions.

    Returns ``(values, ok)``. ``ok`` is False where (u, v) falls outside the
    image or where any contributing texel is non-finite; values there are NaN.
    Bilinear weights use the texel centers; positions in the outer half-pixel
    border clamp to the edge texels.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        inb = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    flat = image.reshape(h * w, -1)
    uu = np.where(inb, u, 0.5)
    vv = np.where(inb, v, 0.5)
    if mode == "nearest":
        idx = np.floor(vv).astype(np.intp) * w + np.floor(uu).astype(np.intp)
        vals = flat[idx].astype(np.float64)
    elif mode == "bilinear":
        x = np.clip(uu - 0.5, 0.0, w - 1.0)
        y = np.clip(vv - 0.5, 0.0, h - 1.0)
        x0 = np.minimum(np.floor(x).astype(np.intp), w - 2) if w > 1 else np.zeros_like(x, dtype=np.intp)
        y0 = np.minimum(np.floor(y).astype(np.intp), h - 2) if h > 1 else np.zeros_like(y, dtype=np.intp)
        fx = (x - x0)[..., None]
        fy = (y - y0)[..., None]
        sx = 1 if w > 1 else 0
        sy = w if h > 1 else 0
        i00 = y0 * w + x0
        vals = (
            flat[i00] * ((1 - fx) * (1 - fy))
            + flat[i00 + sx] * (fx * (1 - fy))
            + flat[i00 + sy] * ((1 - fx) * fy)
            + flat[i00 + sx + sy] * (fx * fy)
        )
    else:
        raise RejectedInput(f"unknown sampling mode {mode!r}")
    ok = inb & np.all(np.isfinite(vals), axis=-1)
    vals = np.where(ok[..., None], vals, np.nan)
    if image.ndim == 2:
        vals = vals[..., 0]
    return vals, ok
