import os

# Small, fixed BLAS pools: the matrices in this package are tiny, and a single
# thread keeps timing-sensitive tests stable and runs reproducible.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from wbmpc.robot.biped import default_biped_dict
from wbmpc.robot.model import RobotModel


@pytest.fixture(scope="session")
def biped() -> RobotModel:
    return RobotModel.from_dict(default_biped_dict())


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0xC0FFEE)
