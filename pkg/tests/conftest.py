import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wassmob.embedding import MobilityField, build_embedding
from wassmob.grid import Grid

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def line32():
    return Grid.line(0.0, 1.0, 32)


@pytest.fixture
def exp_embedding(line32):
    A = MobilityField.scalar_1d(lambda x: np.exp(2 * x), line32)
    return A, build_embedding(A)
