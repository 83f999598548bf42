import numpy as np
import pytest

from plvo.geometry import CameraIntrinsics, Pose, quat_from_axis_angle


def random_pose(rng, max_angle=0.5, max_t=1.0) -> Pose:
    axis = rng.normal(size=3)
    angle = rng.uniform(-max_angle, max_angle)
    return Pose(rng.uniform(-max_t, max_t, 3), quat_from_axis_angle(axis, angle))


def points_in_front(rng, n, zmin=2.0, zmax=6.0, spread=1.5):
    Z = rng.uniform(zmin, zmax, n)
    XY = rng.uniform(-spread, spread, (n, 2)) * Z[:, None] / 3.0
    return np.column_stack([XY, Z])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def K500():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
