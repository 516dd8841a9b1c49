import os

# single-threaded BLAS: the desk experiments promise a CPU-time budget,
# and thread fan-out on tiny matmuls only burns cycles anyway
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from flcpool import PoolingKind, build_minicnn, synth_dataset
from flcpool.tensor import Rng


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    """300-example corpus shared by the cheaper training-path tests."""
    return synth_dataset(Rng(7).child(100), n=300)


def tiny_model(pool=PoolingKind.FLC, seed=0, width=2, dtype=np.float32):
    return build_minicnn(pool, in_channels=1, classes=4, width=width,
                         rng=Rng(seed).child(0), dtype=np.dtype(dtype))


@pytest.fixture
def model_factory():
    return tiny_model
