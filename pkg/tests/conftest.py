import numpy as np
import pytest
from hypothesis import settings

from mpcview.geometry import CameraModel, Intrinsics, Pose

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def small_camera(eye=(0.0, 0.0, 0.0), target=(0.0, 0.0, 1.0), width=64, height=48, focal=60.0, cid="cam", role="input"):
    return CameraModel(Intrinsics(focal, focal, width / 2, height / 2, width, height), Pose.look_at(eye, target), cid, role)


def random_pose(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    return Pose(rot, rng.uniform(-2, 2, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
