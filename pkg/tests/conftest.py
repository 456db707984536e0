import numpy as np
import pytest

from tpa.dataio import synth_generate


@pytest.fixture(scope="session")
def synth_small():
    return synth_generate(0, num_classes=3, n_per_class=20, dim=12, t_range=(10, 30))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
