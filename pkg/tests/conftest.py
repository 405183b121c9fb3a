import numpy as np
import pytest

from eegemo.data_model import TrialSet


@pytest.fixture
def small_trials():
    rng = np.random.default_rng(7)
    data = rng.standard_normal((3, 32, 512)).astype(np.float32)
    labels = np.array([[1.0, 2.5, 9.0, 5.0], [3.2, 4.5, 6.0, 7.7], [8.9, 1.0, 1.4, 2.0]])
    return TrialSet(data=data, labels=labels, sample_rate_hz=128.0)
