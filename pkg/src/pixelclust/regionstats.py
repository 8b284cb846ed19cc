"""Per-superpixel statistics feeding the global consistency loss.

Each superpixel k gets a deep feature v_k (mean plus population standard
deviation of the cluster scores over its pixels) and a shallow feature e_k
(the same statistic over the RGB image).  Their squared distances on
adjacent pairs define an affinity matrix which is recomputed every
iteration but treated as a constant inside the loss graph; only the soft
cluster distribution H carries gradients back to the scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .nnops import region_mu_sigma, segment_mean, softmax_channels
from .superpixels import SuperpixelMap
from .tensor import Tensor, as_tensor


@dataclass
class RegionFeatures:
    deep: np.ndarray  # (k, Q) mean+std of cluster scores
    shallow: np.ndarray  # (k, 3) mean+std of RGB values


def region_features(
    scores: np.ndarray, image: np.ndarray, sp: SuperpixelMap
) -> RegionFeatures:
    """Compute v_k and e_k for every superpixel.

    ``scores`` is (Q, H, W); ``image`` is (H, W, 3) in [0, 1].  Both
    statistics use the population variance, so a single-pixel or constant
    region contributes sigma = 0.
    """
    if scores.shape[1:] != sp.shape or image.shape[:2] != sp.shape:
        raise ConfigurationError(
            f"shape mismatch: scores {scores.shape}, image {image.shape}, "
            f"superpixels {sp.shape}"
        )
    deep = region_mu_sigma(as_tensor(scores), sp.labels, sp.k).data
    shallow = region_mu_sigma(
        as_tensor(image.transpose(2, 0, 1)), sp.labels, sp.k
    ).data
    return RegionFeatures(deep=deep, shallow=shallow)


def affinity(
    features: RegionFeatures,
    adjacency: np.ndarray,
    alpha1: float = 200.0,
    alpha2: float = 400.0,
) -> np.ndarray:
    """Affinity A_ij = exp(-|v_i - v_j|^2 / alpha1 - |e_i - e_j|^2 / alpha2)
    on adjacent pairs, zero elsewhere."""
    if alpha1 <= 0 or alpha2 <= 0:
        raise ConfigurationError("affinity scales must be positive")
    v, e = features.deep, features.shallow
    dv = ((v[:, None, :] - v[None, :, :]) ** 2).sum(axis=2)
    de = ((e[:, None, :] - e[None, :, :]) ** 2).sum(axis=2)
    return adjacency * np.exp(-dv / alpha1 - de / alpha2)


def superpixel_probs(scores: Tensor | np.ndarray, sp: SuperpixelMap) -> Tensor:
    """Soft cluster distribution H: row k averages the per-pixel softmax of
    the scores over superpixel k.  Differentiable in the scores."""
    scores = as_tensor(scores)
    if scores.data.shape[1:] != sp.shape:
        raise ConfigurationError(
            f"scores {scores.data.shape} do not cover superpixel map {sp.shape}"
        )
    return segment_mean(softmax_channels(scores), sp.labels, sp.k)
