from functools import lru_cache, wraps
from typing import Optional

import numpy as np
from loguru import logger

from .config import FeatureMode, PerceptionSettings
from .perception import FeatureExtractor, crop_view, extract_features
from .scene import AgentState, GridScene, Heading, TargetRef

# Module-level store so the CLI commands and the training workers share one
# feature cache per process.
_STORE: Optional["FeatureStore"] = None


def init_store(settings: PerceptionSettings) -> "FeatureStore":
    global _STORE
    _STORE = FeatureStore(FeatureExtractor.from_settings(settings), settings)
    return _STORE


def get_store() -> "FeatureStore":
    if _STORE is None:
        raise ValueError("Feature store not initialized")
    return _STORE


def log_after(f):
    """Decorator that logs the cache state after a feature computation."""

    @wraps(f)
    def wrapper(*args, **kwargs):
        self = args[0]
        args = args[1:]
        try:
            return f(self, *args, **kwargs)
        finally:
            self.log_cache(f.__name__)

    return wrapper


class FeatureStore:
    """Caches per-scene observation features.

    The extractor is fixed, so the features of all 4N (location, heading)
    views of a scene are computed once and reused by every episode.
    """

    def __init__(self, extractor: FeatureExtractor, settings: PerceptionSettings) -> None:
        self.extractor = extractor
        self.settings = settings
        self.mode = FeatureMode(settings.feature_mode)

    def __hash__(self) -> int:
        return hash((self.extractor.seed, self.extractor.feature_dim, self.mode, self.settings.hfov))

    @property
    def feature_dim(self) -> int:
        if self.mode is FeatureMode.POOLED:
            return self.extractor.feature_dim
        return int(np.prod(self.extractor.map_shape))

    def clear(self) -> None:
        self.scene_features.cache_clear()

    def log_cache(self, name: str) -> None:
        info = self.scene_features.cache_info()
        logger.debug("{}: {} scenes cached ({} hits, {} misses)", name, info.currsize, info.hits, info.misses)

    def _views(self, scene: GridScene, location_id: int) -> np.ndarray:
        size = (self.settings.view_width, self.settings.view_height)
        pano = scene.panorama(location_id)
        return np.stack([crop_view(pano, h, self.settings.hfov, size) for h in Heading])

    @lru_cache(maxsize=32)
    @log_after
    def scene_features(self, scene: GridScene) -> np.ndarray:
        """(4N, D) features, row = `GridScene.state_index`."""
        rows = [
            extract_features(self.extractor, self._views(scene, loc.id), self.mode)
            for loc in scene.locations
        ]
        feats = np.concatenate(rows) if rows else np.zeros((0, self.feature_dim))
        feats.setflags(write=False)
        return feats

    def view(self, scene: GridScene, state: AgentState) -> np.ndarray:
        return self.scene_features(scene)[scene.state_index(state)]

    def target(self, scene: GridScene, target: TargetRef) -> np.ndarray:
        return self.view(scene, target.state)
