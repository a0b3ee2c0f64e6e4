"""Preset rigs and scenes used by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import CameraModel, Intrinsics, Pose
from .simulator import Box, Disk, Motion, Plane, Scene, SensorModel, Sphere, Texture

WIDTH, HEIGHT, FOCAL = 640, 480, 600.0
SLANT_ANGLES = tuple(range(0, 90, 5))

# Input cameras sit at the corners of a monitor-sized rectangle around the
# ground-truth cameras, all facing the user.
_INPUT_OFFSETS = ((-0.2, -0.12), (0.2, -0.12), (-0.2, 0.12), (0.2, 0.12))
_GT_OFFSETS = ((0.0, 0.0), (0.05, 0.02))


def intrinsics(width=WIDTH, height=HEIGHT, focal=None):
    f = FOCAL * width / WIDTH if focal is None else focal
    return Intrinsics(f, f, width / 2.0, height / 2.0, width, height)


def camera(eye, target, cid, role, width=WIDTH, height=HEIGHT, focal=None):
    return CameraModel(intrinsics(width, height, focal), Pose.look_at(eye, target), cid, role)


def desk_rig(target=(0.0, 0.0, 1.0), width=WIDTH, height=HEIGHT, focal=None, num_gt=2):
    """Four input cameras around a monitor plus ``num_gt`` ground-truth cameras near the middle."""
    rig = [camera((x, y, 0.0), target, f"in{k}", "input", width, height, focal) for k, (x, y) in enumerate(_INPUT_OFFSETS)]
    rig += [camera((x, y, 0.0), target, f"gt{g}", "groundtruth", width, height, focal)
            for g, (x, y) in enumerate(_GT_OFFSETS[:num_gt])]
    return rig


def wall(z=2.0, texture=None):
    tex = texture or Texture("sine", period=0.12, contrast=0.4)
    return Plane(albedo=(0.55, 0.6, 0.7), texture=tex, point=(0.0, 0.0, z), normal=(0.0, 0.0, -1.0),
                 foreground=False, name="wall")


def multi_primitive_scene(texture=True, period_scale=1.0, contrast=0.5):
    """Sphere, box and disk in front of a wall."""
    def tex(period):
        return Texture("sine", period=period * period_scale, contrast=contrast) if texture else Texture()

    prims = (
        Sphere(albedo=(0.85, 0.45, 0.35), texture=tex(0.06), center=(-0.12, 0.02, 1.05), radius=0.13, name="sphere"),
        Box(albedo=(0.35, 0.75, 0.4), texture=tex(0.07), center=(0.16, 0.05, 1.15), half_size=(0.09, 0.12, 0.08),
            rotation=tuple(Pose.look_at((0, 0, 0), (0.4, 0.0, 1.0)).rotation.ravel()), name="box"),
        Disk(albedo=(0.9, 0.85, 0.4), texture=tex(0.05), point=(0.0, -0.16, 0.95), normal=(0.0, 0.5, -1.0),
             radius=0.08, name="disk"),
    )
    return Scene(prims, background=wall(texture=None if texture else Texture()))


def checker_scene(period=0.02):
    plane = Plane(albedo=(0.9, 0.9, 0.9), texture=Texture("checker", period=period, contrast=0.85),
                  point=(0.0, 0.0, 1.0), normal=(0.0, 0.0, -1.0), half_extent=(0.3, 0.22), name="checker")
    return Scene((plane,), background=wall())


def occluder_scene():
    """A card in front of the wall, placed to hide part of the wall from input view 1 only."""
    card = Plane(albedo=(0.8, 0.3, 0.3), texture=Texture("sine", 0.04, 0.5), point=(0.3, -0.12, 1.0),
                 normal=(0.0, 0.0, -1.0), half_extent=(0.06, 0.06), name="card")
    return Scene((card,), background=wall())


def slanted_plane(angle_deg, texture=None):
    """Textured rectangle at (0, 0, 1) facing the input rig."""
    tex = texture or Texture("sine", period=0.05, contrast=0.6)
    return Plane(albedo=(0.9, 0.7, 0.5), texture=tex, point=(0.0, 0.0, 1.0), normal=(0.0, 0.0, -1.0),
                 half_extent=(0.25, 0.2), name=f"slant{angle_deg}")


def slant_novel_camera(angle_deg, distance=1.0, width=WIDTH, height=HEIGHT, focal=None, cid="gt0"):
    """Ground-truth camera orbiting the plane center so the plane is slanted by ``angle_deg`` in its view."""
    th = np.radians(angle_deg)
    eye = (distance * np.sin(th), 0.0, 1.0 - distance * np.cos(th))
    return camera(eye, (0.0, 0.0, 1.0), cid, "groundtruth", width, height, focal)


def slant_case(angle_deg, width=WIDTH, height=HEIGHT):
    """(scene, rig) for one point of the slant suite."""
    if not 0 <= angle_deg < 90:
        raise ConfigError("slant angle must lie in [0, 90)")
    rig = [c for c in desk_rig(width=width, height=height, num_gt=0)]
    rig.append(slant_novel_camera(angle_deg, width=width, height=height))
    return Scene((slanted_plane(angle_deg),)), rig


@dataclass
class Preset:
    scene: Scene
    rig: list
    sensor: SensorModel
    num_frames: int = 1
    motion: Motion = None


def preset(name, width=WIDTH, height=HEIGHT, seed=0):
    """Named simulation setups. ``slant-<deg>`` selects one slant-suite angle."""
    if name == "unbiased":
        return Preset(multi_primitive_scene(), desk_rig(width=width, height=height), SensorModel.identity(seed))
    if name == "flat":
        return Preset(multi_primitive_scene(texture=False), desk_rig(width=width, height=height), SensorModel.identity(seed))
    if name == "biased":
        return Preset(multi_primitive_scene(), desk_rig(width=width, height=height), SensorModel.preset("default", seed=seed))
    if name == "noisy":
        return Preset(multi_primitive_scene(), desk_rig(width=width, height=height),
                      SensorModel.preset("identity", noise_sigma=0.003, seed=seed), num_frames=30)
    if name == "checker":
        return Preset(checker_scene(), desk_rig(width=width, height=height), SensorModel.identity(seed))
    if name == "occluder":
        return Preset(occluder_scene(), desk_rig(width=width, height=height), SensorModel.identity(seed))
    if name == "moving":
        return Preset(multi_primitive_scene(), desk_rig(width=width, height=height), SensorModel.identity(seed),
                      num_frames=10, motion=Motion(0, (0.01, 0.0, 0.0)))
    if name.startswith("slant-"):
        scene, rig = slant_case(int(name.split("-", 1)[1]), width, height)
        return Preset(scene, rig, SensorModel.preset("default", seed=seed))
    raise ConfigError(f"unknown preset {name!r}")


PRESET_NAMES = ("unbiased", "flat", "biased", "noisy", "checker", "occluder", "moving", "slant-sweep")
