import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def rel_err(a, b, floor=1e-8):
    """Elementwise relative error with an absolute floor for near-zero references."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.abs(b), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
