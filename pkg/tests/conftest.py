import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from rla import tensor as T  # noqa: E402


@pytest.fixture(autouse=True)
def finite_checks():
    """Tests run with NaN/Inf detection after every op."""
    with T.checks(True):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
