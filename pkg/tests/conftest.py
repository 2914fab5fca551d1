import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splatlight.scene import Camera, GaussianCloud, logit  # noqa: E402


def random_camera(rng, width=8, height=8, fov=60.0):
    eye = rng.normal(0, 0.3, 3) + np.array([0.0, 0.0, -3.0])
    return Camera.look_at(eye, rng.normal(0, 0.1, 3), np.array([0.0, -1.0, 0.0]), fov, width, height)


def random_cloud(rng, n=5, degree=None, spread=0.8, scale=(0.1, 0.5)):
    """Small random scene around the origin with every attribute randomised."""
    cloud = GaussianCloud.zeros(n)
    cloud.positions = rng.uniform(-spread, spread, (n, 3))
    cloud.rotations = rng.normal(size=(n, 4))
    cloud.log_scales = np.log(rng.uniform(*scale, (n, 3)))
    cloud.opacity_logits = logit(rng.uniform(0.3, 0.9, (n, 1)))
    cloud.sh = rng.normal(0, 0.3, cloud.sh.shape)
    cloud.structure_logits = rng.normal(size=(n, 1))
    cloud.depth_logits = rng.normal(size=(n, 1))
    cloud.illum = rng.normal(0, 0.3, (n, 3))
    cloud.noise = rng.normal(0, 0.1, (n, 3))
    cloud.active_sh_degree = int(rng.integers(0, 4)) if degree is None else degree
    return cloud


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one pass/fail line per acceptance criterion, shown in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
