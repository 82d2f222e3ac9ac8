import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)


def random_tet_vertices(rng, scale=1.0):
    """A well-shaped random affine tet: random rotation/stretch of the
    reference tet, rejected if nearly degenerate."""
    while True:
        A = rng.normal(size=(3, 3))
        if abs(np.linalg.det(A)) > 0.3:
            break
    v0 = rng.normal(size=3) * scale
    ref = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    )
    return v0 + ref @ A.T * scale
