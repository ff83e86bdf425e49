import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coopbev.model import CoopModel
from coopbev.pipeline import pack_scene
from coopbev.scene import SceneConfig, generate_scene


@pytest.fixture(scope="session")
def default_scene():
    return generate_scene(SceneConfig(), 42, 0)


@pytest.fixture(scope="session")
def default_pack(default_scene):
    return pack_scene(default_scene)


@pytest.fixture(scope="session")
def model42():
    return CoopModel(42, np.float32)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
