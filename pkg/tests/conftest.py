import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from recourse_mi.nn import Model


def make_logistic(theta, bias) -> Model:
    """Logistic-regression Model with given weights/bias."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, 1)
    return Model(
        weights=[theta],
        biases=[np.array([float(bias)])],
        architecture=[],
        d=theta.shape[0],
    )


@pytest.fixture
def halfspace_2d() -> Model:
    """Positive iff x1 > 1 (boundary distance from origin is exactly 1)."""
    return make_logistic([4.0, 0.0], -4.0)
