import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once per kernel path (the dispatcher reads the flag per call)."""
    from rpmanifold import _accel
    monkeypatch.setattr(_accel, "USE_NUMBA", request.param == "numba" and _accel._numba is not None)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
