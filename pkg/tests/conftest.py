import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

finite = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False, allow_infinity=False)
angles = st.floats(min_value=-math.pi, max_value=math.pi, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


@st.composite
def unit_vectors(draw):
    v = draw(st.tuples(finite, finite, finite).map(np.array))
    n = float(np.linalg.norm(v))
    if n < 1e-3:
        v, n = np.array([1.0, 0.0, 0.0]), 1.0
    return v / n


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1.0
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
