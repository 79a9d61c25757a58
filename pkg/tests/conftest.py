import numpy as np
import pytest
from loguru import logger

from indoornav.config import EnvConfig, PerceptionSettings
from indoornav.features import FeatureStore
from indoornav.perception import FeatureExtractor
from indoornav.scene import GridScene, Heading, TargetRef, scene_from_mask, with_targets


@pytest.fixture(autouse=True)
def _quiet_logs():
    logger.remove()
    yield


@pytest.fixture
def room_3x3() -> GridScene:
    return scene_from_mask(np.ones((3, 3), dtype=bool), scene_id="room-3x3", seed=1)


@pytest.fixture
def room_4x4() -> GridScene:
    return scene_from_mask(np.ones((4, 4), dtype=bool), scene_id="room-4x4", seed=2)


@pytest.fixture
def corridor() -> GridScene:
    """1 x 4 strip running East-West."""
    return scene_from_mask(np.ones((1, 4), dtype=bool), scene_id="corridor", seed=3)


@pytest.fixture
def u_room() -> GridScene:
    mask = np.array(
        [
            [1, 1, 1],
            [1, 0, 1],
            [1, 0, 1],
        ],
        dtype=bool,
    )
    return scene_from_mask(mask, scene_id="u-room", seed=4)


def all_targets(scene: GridScene):
    return [TargetRef(loc.id, h) for loc in scene.locations for h in Heading]


@pytest.fixture
def targeted_room(room_3x3) -> GridScene:
    """3x3 room with every view featureful and two landmark targets."""
    featureful = all_targets(room_3x3)
    landmarks = [TargetRef(0, Heading.E), TargetRef(8, Heading.W)]
    return with_targets(room_3x3, landmarks, featureful)


@pytest.fixture
def small_perception() -> PerceptionSettings:
    return PerceptionSettings(view_width=24, view_height=24, feature_dim=8)


@pytest.fixture
def feature_store(small_perception) -> FeatureStore:
    return FeatureStore(FeatureExtractor.from_settings(small_perception), small_perception)


@pytest.fixture
def no_explore() -> EnvConfig:
    return EnvConfig(eval_exploration=0.0, eval_max_steps=200, train_max_steps=50)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
