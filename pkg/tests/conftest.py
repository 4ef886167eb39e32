import numpy as np
import pytest

from flk.geometry import CameraSpaceConfig
from flk.synthgen import make_face_layout, make_scene


@pytest.fixture(scope="session")
def cfg():
    return CameraSpaceConfig()


@pytest.fixture(scope="session")
def canonical_layout():
    """Unjittered 98-point layout plus its normal template."""
    return make_face_layout(0, jitter=0.0)


@pytest.fixture(scope="session")
def noiseless_scene():
    return make_scene(seed=0)


def random_rotation(rng):
    """Uniform-ish random rotation via a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
