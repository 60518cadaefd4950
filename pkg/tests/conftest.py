import numpy as np
import pytest

from chau15.protocol import IntensityClass, ProtocolParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def three_class_params():
    return ProtocolParams(
        intensity_classes=(
            IntensityClass("mu", 0.66, 0.9781),
            IntensityClass("nu1", 0.05, 0.014),
            IntensityClass("nu2", 0.0016, 0.0079),
        )
    )
