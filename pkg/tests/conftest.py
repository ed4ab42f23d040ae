import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from icforest.core import Dataset, Schema

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def schema2():
    return Schema.from_dict({"age": "numeric", "grp": "nominal:3"})


@pytest.fixture
def toy(schema2):
    rng = np.random.default_rng(5)
    n = 40
    left = rng.uniform(0, 3, n).round(2)
    right = left + rng.uniform(0.1, 1.0, n).round(2)
    right[::7] = np.inf
    X = np.column_stack([rng.uniform(0, 1, n), rng.integers(1, 4, n)])
    return Dataset(left, right, X, schema2)
