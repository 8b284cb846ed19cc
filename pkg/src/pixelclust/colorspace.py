"""sRGB to CIELAB conversion (D65 reference white).

Inputs are float arrays in [0, 1] with the color axis last.  The conversion
runs sRGB -> linear RGB -> XYZ -> Lab, so white (1, 1, 1) maps to
L = 100, a = b = 0 and black maps to the origin.
"""

from __future__ import annotations

import numpy as np

# D65 white point in XYZ, Y normalised to 1.
_WHITE = np.array([0.95047, 1.0, 1.08883])

# linear RGB -> XYZ (sRGB primaries).
_RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)

_DELTA = 6.0 / 29.0


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3.0 * _DELTA**2) + 4.0 / 29.0)


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert an (..., 3) sRGB array in [0, 1] to CIELAB."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise ValueError(f"expected a trailing color axis of size 3, got {rgb.shape}")
    linear = _srgb_to_linear(np.clip(rgb, 0.0, 1.0))
    xyz = linear @ _RGB_TO_XYZ.T
    f = _lab_f(xyz / _WHITE)
    lab = np.empty_like(rgb)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab
