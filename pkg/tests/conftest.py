import os

import numpy as np
import pytest

from frustumseg.sources.phantom import PhantomDataset, PhantomSpec
from frustumseg.volume import FrustumVolume

DESK_SPLIT = (3, 1, 2)


@pytest.fixture(scope="session")
def DESK_SPEC():
    return PhantomSpec()


@pytest.fixture(scope="function")
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def DATASET_DIR(tmp_path_factory):
    return str(tmp_path_factory.mktemp("phantoms"))


@pytest.fixture(scope="session")
def DATASET_MANIFEST(DESK_SPEC, DATASET_DIR):
    dataset = PhantomDataset(DESK_SPEC, count=sum(DESK_SPLIT), seed=7, split=DESK_SPLIT)
    return dataset.write(DATASET_DIR)


@pytest.fixture(scope="session")
def SMALL_FRUSTUM():
    data = np.linspace(0, 255, 24 * 20 * 16, dtype=np.float32).reshape(24, 20, 16)
    return FrustumVolume(
        data=data,
        radial_step_mm=0.5,
        azimuth_step_deg=1.003,
        elevation_step_deg=1.003,
        radial_start_mm=10.0,
    )


@pytest.fixture(scope="function")
def workdir(tmp_path):
    cwd = os.getcwd()
    os.chdir(tmp_path)
    yield tmp_path
    os.chdir(cwd)
