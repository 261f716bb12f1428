import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from hoisynth.fixtures import default_rig
from hoisynth.geometry import RigidTransform


@pytest.fixture(scope="session")
def rig():
    return default_rig()


@pytest.fixture(scope="session")
def demo_dir(tmp_path_factory):
    from hoisynth.demo import write_demo

    d = tmp_path_factory.mktemp("demo")
    write_demo(d)
    return d


def random_transform(rng, scale=1.0) -> RigidTransform:
    r = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
    return RigidTransform(r, rng.normal(size=3) * scale)
