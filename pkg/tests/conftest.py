import numpy as np
import pytest
from hypothesis import settings

from ctrlcost.precision import PrecisionContext

settings.register_profile("ci", max_examples=25, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def ctx():
    return PrecisionContext(256)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
