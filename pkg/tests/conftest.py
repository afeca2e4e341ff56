import numpy as np
import pytest

from cogload import _backend
from cogload.dataset import SynthConfig, synth_generate


@pytest.fixture(params=sorted(_backend.BACKENDS))
def backend(request):
    """Run the test once per available kernel backend."""
    with _backend.use_backend(request.param) as kern:
        yield kern


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_dataset():
    cfg = SynthConfig(seed=3, n_subjects=2, n_sessions=2, epochs_per_block=6,
                      frames_per_epoch=40, class_separation=0.5)
    return synth_generate(cfg)
