import numpy as np
import pytest

from primpose.dataset import GenConfig, generate_dataset
from primpose.geometry import CameraIntrinsics, Pose
from primpose.mesh import cube_mesh
from primpose.primitive import PrimitiveSpec

# Lines recorded by tests/test_acceptance.py, echoed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_pose(rng, tz=(0.5, 3.0), lateral=0.1):
    """Uniform rotation; T_z uniform in ``tz``; T_x, T_y within +-lateral*T_z."""
    z = rng.uniform(*tz)
    return Pose(random_quat(rng), np.array([rng.uniform(-lateral, lateral) * z,
                                            rng.uniform(-lateral, lateral) * z, z]))


@pytest.fixture(scope="session")
def K():
    return CameraIntrinsics.default()


@pytest.fixture(scope="session")
def cube():
    return cube_mesh(0.1)


@pytest.fixture(scope="session")
def spec(cube):
    return PrimitiveSpec.from_diameter(cube.diameter)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, cube, spec, K):
    root = tmp_path_factory.mktemp("ds") / "d"
    generate_dataset(cube, spec, K, GenConfig(n_samples=12, seed=3), root)
    return root
