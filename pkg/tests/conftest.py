import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tfusion import tensor

from synth import generate_dataset


@pytest.fixture
def f64():
    """Switch the engine to float64 for finite-difference work."""
    previous = tensor.default_dtype()
    tensor.set_default_dtype(np.float64)
    yield
    tensor.set_default_dtype(previous)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """Full 500-per-class synthetic dataset (32x32 PPM)."""
    root = tmp_path_factory.mktemp("synth_full")
    return generate_dataset(root, per_class=500)


@pytest.fixture(scope="session")
def small_root(tmp_path_factory):
    """Small 12-per-class dataset for fast CLI and pipeline tests."""
    root = tmp_path_factory.mktemp("synth_small")
    return generate_dataset(root, per_class=12, seed=7)
