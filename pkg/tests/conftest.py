import numpy as np
import pytest
from hypothesis import settings

from bsig3d import synthetic
from bsig3d.keypoints import detect_iss

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(scope="session")
def blob():
    return synthetic.blob(2500, seed=7, bumps=30, amplitude=0.2)


@pytest.fixture(scope="session")
def blob_keypoints(blob):
    return detect_iss(blob).indices


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
