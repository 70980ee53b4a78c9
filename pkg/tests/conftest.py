import numpy as np
import pytest

from segedit.backends import BilinearSRBackend, ToyDetectionBackend, ToySegmentationBackend
from segedit.editnet import EditNetConfig, GeneratorWeights
from segedit.engine import Engine, EngineConfig
from segedit.imagecore import ImageBuffer, MaskMap


@pytest.fixture(scope="session")
def tiny_weights():
    return GeneratorWeights(EditNetConfig(), seed=0)


@pytest.fixture(scope="session")
def engine64(tiny_weights):
    return Engine(EngineConfig(working_size=64), weights=tiny_weights)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_seg():
    return ToySegmentationBackend()


@pytest.fixture(scope="session")
def toy_det():
    return ToyDetectionBackend()


@pytest.fixture(scope="session")
def bilinear_sr():
    return BilinearSRBackend()


def random_image(rng: np.random.Generator, h: int = 16, w: int = 16, c: int = 3) -> ImageBuffer:
    return ImageBuffer(rng.random((h, w, c)).astype(np.float32))


def random_mask(rng: np.random.Generator, h: int = 16, w: int = 16) -> MaskMap:
    return MaskMap((rng.random((h, w)) > 0.5).astype(np.uint8))
