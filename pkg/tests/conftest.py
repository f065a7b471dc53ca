import numpy as np
import pytest

from orbitpcqa.cloud_io import PointCloud


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cloud(rng, count=100, spread=1.0):
    return PointCloud(
        points=rng.uniform(-spread, spread, size=(count, 3)),
        colors=rng.integers(0, 256, size=(count, 3)),
    )


@pytest.fixture
def cloud_factory():
    return random_cloud
