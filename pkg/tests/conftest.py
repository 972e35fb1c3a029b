from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"
CONFIGS = ROOT / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def wdbc_path():
    path = DATA / "wdbc.data"
    if not path.exists():
        pytest.skip("WDBC file not present")
    return path


@pytest.fixture(scope="session")
def mnist_dir():
    path = DATA / "mnist"
    if not path.is_dir():
        pytest.skip("MNIST files not present")
    return path
