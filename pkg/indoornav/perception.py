"""Directional views, keypoint counting and fixed convolutional features."""
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import FeatureMode, PerceptionSettings
from .exceptions import PerceptionError
from .neuro.layers import AvgPool2D, Conv2D, ReLU
from .scene import Heading

ViewImage = np.ndarray
"""float64 array (height, width, 3) with values in [0, 1]."""


def rotate_cols(panorama: np.ndarray, shift: int) -> np.ndarray:
    """Cyclic column shift: column c moves to column c + shift."""
    return np.roll(panorama, shift, axis=1)


def _bilinear_rows(image: np.ndarray, out_h: int) -> np.ndarray:
    h = image.shape[0]
    y = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    fy = np.clip(y - y0, 0.0, 1.0)[:, None, None]
    return image[y0] * (1 - fy) + image[y1] * fy


def crop_view(
    panorama: np.ndarray,
    heading: Heading,
    hfov: float = 90.0,
    size: Tuple[int, int] = (84, 84),
) -> ViewImage:
    """The `hfov`-wide window of `panorama` centered on `heading`.

    `size` is (width, height). Column offsets are computed relative to the
    heading's center column, so
    ``crop_view(rotate_cols(p, W // 4), heading.turn_right()) == crop_view(p, heading)``
    holds exactly.
    """
    if not 0 < hfov <= 360:
        raise PerceptionError(f"Invalid hfov {hfov}", "bad-hfov")
    pano = np.asarray(panorama)
    if pano.ndim != 3 or pano.shape[1] % 4:
        raise PerceptionError(
            f"Panorama width must be divisible by 4, got shape {pano.shape}", "dimension-mismatch"
        )
    height, width = pano.shape[:2]
    out_w, out_h = size
    span = width * hfov / 360.0
    center = int(Heading.parse(heading)) * width // 4
    offset = (np.arange(out_w) + 0.5 - out_w / 2) * span / out_w
    base = np.floor(offset)
    fx = (offset - base)[None, :, None]
    x0 = (center + base.astype(np.int64)) % width
    x1 = (x0 + 1) % width
    image = pano.astype(np.float64) / 255.0 if pano.dtype == np.uint8 else pano.astype(np.float64)
    cols = image[:, x0] * (1 - fx) + image[:, x1] * fx
    return _bilinear_rows(cols, out_h)


def _box3(a: np.ndarray) -> np.ndarray:
    padded = np.pad(a, 1)
    return sliding_window_view(padded, (3, 3)).sum(axis=(2, 3))


def harris_response(view: ViewImage, k: float = 0.05) -> np.ndarray:
    """Harris response on the gray image, divided by std(gray)^4.

    The normalization makes the response invariant to global brightness
    scaling. A constant image has zero response everywhere.
    """
    view = np.asarray(view, dtype=np.float64)
    gray = view.mean(axis=2) if view.ndim == 3 else view
    std = gray.std()
    if std == 0:
        return np.zeros_like(gray)
    padded = np.pad(gray, 1, mode="edge")
    ix = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2
    iy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2
    sxx = _box3(ix * ix)
    syy = _box3(iy * iy)
    sxy = _box3(ix * iy)
    response = sxx * syy - sxy * sxy - k * (sxx + syy) ** 2
    return response / std**4


def count_keypoints(
    view: ViewImage, k: float = 0.05, threshold: float = 1.0, border: int = 2
) -> int:
    """Harris corners above `threshold` that are 3x3 local maxima, ignoring
    `border` pixels at the image edge."""
    response = harris_response(view, k)
    padded = np.pad(response, 1, constant_values=-np.inf)
    local_max = sliding_window_view(padded, (3, 3)).max(axis=(2, 3))
    peaks = (response > threshold) & (response == local_max)
    if border:
        peaks[:border] = peaks[-border:] = False
        peaks[:, :border] = peaks[:, -border:] = False
    return int(peaks.sum())


def is_featureful(
    view: ViewImage,
    min_keypoints: int = 12,
    k: float = 0.05,
    threshold: float = 1.0,
) -> bool:
    return count_keypoints(view, k, threshold) >= min_keypoints


class FeatureExtractor:
    """Fixed, seeded, bias-free convolution stack.

    Three conv3x3 + ReLU + average-pool stages (pool 2, 2, 3) take an 84x84
    view to a 7x7 map with `feature_dim` channels. Parameters never change
    after construction.
    """

    POOLS = (2, 2, 3)

    def __init__(
        self,
        seed: int = 0,
        feature_dim: int = 64,
        view_size: Tuple[int, int] = (84, 84),
        channels: Tuple[int, int] = (16, 32),
    ) -> None:
        factor = int(np.prod(self.POOLS))
        width, height = view_size
        if width % factor or height % factor:
            raise PerceptionError(
                f"View size {view_size} must be divisible by {factor}", "dimension-mismatch"
            )
        self.seed = seed
        self.feature_dim = feature_dim
        self.view_size = view_size
        widths = (3, *channels, feature_dim)
        self._stages = [
            (
                Conv2D(f"conv{i}", widths[i], widths[i + 1]),
                ReLU(f"relu{i}"),
                AvgPool2D(f"pool{i}", pool),
            )
            for i, pool in enumerate(self.POOLS)
        ]
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2024]))
        params = {}
        for conv, _, _ in self._stages:
            params.update(conv.init_params(rng))
        for value in params.values():
            value.setflags(write=False)
        self._params = params

    @classmethod
    def from_settings(cls, settings: PerceptionSettings) -> "FeatureExtractor":
        return cls(
            seed=settings.feature_seed,
            feature_dim=settings.feature_dim,
            view_size=(settings.view_width, settings.view_height),
        )

    @property
    def map_shape(self) -> Tuple[int, int, int]:
        factor = int(np.prod(self.POOLS))
        return (self.view_size[1] // factor, self.view_size[0] // factor, self.feature_dim)

    def spatial_batch(self, views: np.ndarray) -> np.ndarray:
        """(B, H, W, 3) views -> (B, h, w, D) feature maps."""
        x = np.asarray(views, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != (self.view_size[1], self.view_size[0], 3):
            raise PerceptionError(
                f"Expected views of shape {(self.view_size[1], self.view_size[0], 3)}, "
                f"got {x.shape[1:]}",
                "dimension-mismatch",
            )
        for conv, relu, pool in self._stages:
            x, _ = conv.forward(self._params, x)
            x, _ = relu.forward(self._params, x)
            x, _ = pool.forward(self._params, x)
        return x


def extract_spatial(extractor: FeatureExtractor, view: ViewImage) -> np.ndarray:
    """H x W x D feature map of one view."""
    return extractor.spatial_batch(np.asarray(view)[None])[0]


def extract_pooled(extractor: FeatureExtractor, view: ViewImage) -> np.ndarray:
    """D-dim vector: the spatial mean of `extract_spatial`."""
    return extract_spatial(extractor, view).mean(axis=(0, 1))


def extract_features(
    extractor: FeatureExtractor, views: np.ndarray, mode: FeatureMode
) -> np.ndarray:
    """Flat per-view features for a batch: D (pooled) or H*W*D (spatial)."""
    maps = extractor.spatial_batch(views)
    if FeatureMode(mode) is FeatureMode.POOLED:
        return maps.mean(axis=(1, 2))
    return maps.reshape(len(maps), -1)
