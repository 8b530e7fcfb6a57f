import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cube_patches():
    """Small rotated noisy cube patch set with a feature top-up, shared by training tests."""
    from fpnormal.dataset import build_patch_set
    from fpnormal.ground_truth import cube_mesh
    return build_patch_set(cube_mesh(), 3000, 0.005, seed=11, n_random=300, n_feature=150)
