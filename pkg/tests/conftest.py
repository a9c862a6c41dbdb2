import numpy as np
import pytest

from stfactor import LatticeField, demean


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_field(shape, seed=0, demeaned=True):
    values = np.random.default_rng(seed).standard_normal(shape)
    field = LatticeField(values)
    return demean(field) if demeaned else field
