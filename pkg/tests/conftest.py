import numpy as np
import pytest

from jointcalib.board import BoardSpec
from jointcalib.geometry import CameraModel
from jointcalib.pipeline import entries_from_scene
from jointcalib.simulate import default_scene, simulate_frame


@pytest.fixture
def cam1000():
    return CameraModel(1000.0, 1000.0, 640.0, 360.0, image_size=(1280, 720))


@pytest.fixture
def spec():
    return BoardSpec()


@pytest.fixture(scope="session")
def clean_scene():
    return default_scene()


@pytest.fixture(scope="session")
def clean_frame(clean_scene):
    return simulate_frame(clean_scene, 0)


@pytest.fixture(scope="session")
def exact_entries(clean_scene):
    """Noiseless corners paired with the exact simulated LiDAR hole centers."""
    entries, _ = entries_from_scene(clean_scene, detect=False)
    return entries


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
