import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stylestab.perceptual import FeatureNet

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def net():
    return FeatureNet(seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
