import numpy as np
import pytest

from dured.core import ForwardModel
from dured.sampling import SamplingPDF, draw_mask


def random_image(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def dense_matrix(fn, shape):
    """Materialize a linear image -> image map column by column."""
    n = shape[0] * shape[1]
    cols = [fn(e.reshape(shape)).ravel() for e in np.eye(n, dtype=np.complex128)]
    return np.stack(cols, axis=1)


def random_forward_model(rng, shape, density=0.5):
    mask = rng.random(shape) < density
    mask[shape[0] // 2, shape[1] // 2] = True
    weights = np.where(mask, rng.uniform(0.5, 3.0, shape), 0.0)
    return ForwardModel(mask, weights)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    return draw_mask(SamplingPDF(0.3, 1.0, 8, 8), 3).forward_model()
