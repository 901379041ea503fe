"""Feature extraction: turn an image region into a fixed-length vector.

The default :class:`PatchGridExtractor` stands in for a CNN backbone: it crops
the box, resamples it bilinearly to an ``S x S`` grid and flattens the
grayscale luminance. Anything with ``output_dim`` and ``extract`` can replace
it.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .geometry import MIN_BOX_SIZE, BoundingBox, ImageSize

# BT.709 weights; they sum to exactly 1.0 in binary floating point
LUMA = np.array([0.2126, 0.7152, 0.0722])


def image_size(image: np.ndarray) -> ImageSize:
    return ImageSize(float(image.shape[1]), float(image.shape[0]))


def as_image(pixels) -> np.ndarray:
    """Validate and convert ``pixels`` to a float64 image array."""
    image = np.asarray(pixels, dtype=np.float64)
    if image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[2] != 3):
        raise ValueError(f"image must be HxW or HxWx3, got shape {image.shape}")
    if image.size == 0:
        raise ValueError("empty image")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return image


def luminance(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image
    return image @ LUMA


class FeatureExtractor(Protocol):
    output_dim: int

    def extract(self, image: np.ndarray, box: BoundingBox) -> np.ndarray: ...


def _sample_axis(start: float, length: float, samples: int, limit: int):
    # pixel k covers [k, k+1); sample points sit at the centers of `samples` equal cells
    coords = start + (np.arange(samples) + 0.5) * (length / samples) - 0.5
    lo = np.floor(coords)
    frac = coords - lo
    lo = lo.astype(np.intp)
    hi = np.clip(lo + 1, 0, limit - 1)
    lo = np.clip(lo, 0, limit - 1)
    return lo, hi, frac


def bilinear_crop(gray: np.ndarray, box: BoundingBox, size: int) -> np.ndarray:
    """Resample the region under ``box`` to ``size x size`` with pixel-center alignment."""
    height, width = gray.shape
    x_lo, x_hi, fx = _sample_axis(box.x0, box.width, size, width)
    y_lo, y_hi, fy = _sample_axis(box.y0, box.height, size, height)
    top = gray[y_lo][:, x_lo] * (1.0 - fx) + gray[y_lo][:, x_hi] * fx
    bottom = gray[y_hi][:, x_lo] * (1.0 - fx) + gray[y_hi][:, x_hi] * fx
    return top * (1.0 - fy)[:, None] + bottom * fy[:, None]


class PatchGridExtractor:
    """Grayscale ``grid x grid`` patch of the boxed region, flattened row-major."""

    def __init__(self, grid: int = 16, min_box_size: float = MIN_BOX_SIZE) -> None:
        if grid < 1:
            raise ValueError("grid must be positive")
        self.grid = int(grid)
        self.min_box_size = min_box_size
        self.output_dim = self.grid * self.grid

    def __repr__(self) -> str:
        return f"PatchGridExtractor(grid={self.grid})"

    def extract(self, image: np.ndarray, box: BoundingBox) -> np.ndarray:
        if box.below_floor(self.min_box_size):
            raise ValueError(
                f"box {box!r} is below the {self.min_box_size:g}-pixel minimum size"
            )
        if not box.inside(image_size(image)):
            raise ValueError(f"box {box!r} lies outside the image")
        patch = bilinear_crop(luminance(image), box, self.grid)
        return patch.reshape(-1)


def build_state_vector(features: np.ndarray, history: np.ndarray, n_actions: int | None = None) -> np.ndarray:
    """Concatenate image features with the one-hot action history block.

    ``history`` is the flattened ``4 x n_actions`` block; pass ``n_actions``
    to have its length checked.
    """
    features = np.asarray(features, dtype=np.float64).reshape(-1)
    history = np.asarray(history, dtype=np.float64).reshape(-1)
    if n_actions is not None and history.size != 4 * n_actions:
        raise ValueError(
            f"history block has {history.size} entries, expected 4 x {n_actions} = {4 * n_actions}"
        )
    return np.concatenate([features, history])
