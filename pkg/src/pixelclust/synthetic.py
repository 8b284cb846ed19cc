"""Synthetic test images with known ground-truth segmentations."""

from __future__ import annotations

import numpy as np

# Flat fill colors chosen to be far apart in CIELAB (pairwise L1
# distance > 100), so color-based merging cannot cross region borders.
QUADRANT_COLORS = (
    (0.9, 0.1, 0.1),
    (0.1, 0.75, 0.2),
    (0.15, 0.25, 0.9),
    (0.95, 0.85, 0.1),
)


def four_quadrants(size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Build a square image of four flat-color quadrants.

    Returns (image, truth): image is (size, size, 3) float64 in [0, 1],
    truth is the (size, size) int label map with quadrant ids 0..3 in
    row-major quadrant order.
    """
    if size < 2 or size % 2:
        raise ValueError("size must be an even integer >= 2")
    half = size // 2
    image = np.empty((size, size, 3), dtype=np.float64)
    truth = np.empty((size, size), dtype=np.int64)
    for idx, color in enumerate(QUADRANT_COLORS):
        rows = slice(0, half) if idx < 2 else slice(half, size)
        cols = slice(0, half) if idx % 2 == 0 else slice(half, size)
        image[rows, cols] = color
        truth[rows, cols] = idx
    return image, truth


def random_image(height: int, width: int, seed: int = 0) -> np.ndarray:
    """Uniform-random RGB image in [0, 1], seeded."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(height, width, 3))
