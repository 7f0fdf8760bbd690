import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def _require_pydataset():
    pytest.importorskip("pydataset", reason="benchmark tables come from pydataset")


@pytest.fixture(scope="session")
def wbc():
    _require_pydataset()
    import benchmark_data

    return benchmark_data.wbc()


@pytest.fixture(scope="session")
def glass():
    _require_pydataset()
    import benchmark_data

    return benchmark_data.glass()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
