import numpy as np
import pytest

from relief.differential import depth_to_normal
from relief.grid import DepthMap


def gaussian_bump(size=128, amplitude=40.0, sigma=16.0, centre=None):
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    cy, cx = centre if centre is not None else ((size - 1) / 2, (size - 1) / 2)
    return amplitude * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))


def relief_surface(size=64, amplitude=1.0):
    """Smooth synthetic relief: a bump plus a gentle wave pattern."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    bump = np.exp(-((xx - 0.42 * size) ** 2 + (yy - 0.52 * size) ** 2) / (2 * (size / 8) ** 2))
    wave = 0.5 * np.sin(xx / 9) * np.cos(yy / 13)
    return amplitude * (bump + wave)


def two_plateaus(h=32, w=32, height=30.0):
    z = np.zeros((h, w))
    z[:, w // 2:] = height
    return z


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def relief_pair():
    """(relative depth, detail normals) where the depth is 1/5 of a relief
    whose normals are the detail map."""
    z = relief_surface(64, amplitude=5.0)
    return DepthMap(z / 5.0), depth_to_normal(DepthMap(z))


# acceptance results, echoed in the terminal summary so they show without -s
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
