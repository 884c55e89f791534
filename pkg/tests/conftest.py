import numpy as np
import pytest

from detvi.data import DataMatrix, TargetVector
from detvi.predictors import LinearModel


@pytest.fixture
def linear_data():
    """n=200, p=6 Gaussian design with known coefficients (last two null)."""
    rng = np.random.default_rng(7)
    X = rng.standard_normal((200, 6))
    beta = np.array([3.0, -2.0, 1.0, 0.5, 0.0, 0.0])
    y = X @ beta + 0.1 * rng.standard_normal(200)
    return DataMatrix(X), TargetVector(y, "regression"), beta


@pytest.fixture
def linear_model():
    return LinearModel(np.array([3.0, -2.0, 1.0, 0.5, 0.0, 0.0]), 1.0)
