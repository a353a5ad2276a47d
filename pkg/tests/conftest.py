# tests/conftest.py

import numpy as np
import pytest

from ingest.synthetic import SynthSpec, generate_synthetic
from services.config import load_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def config():
    return load_config()


@pytest.fixture
def static_sequence():
    return generate_synthetic(SynthSpec(name="static", n_frames=6, seed=3))

