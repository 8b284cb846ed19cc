"""Training losses for the per-image clustering network.

Three terms drive training:

* a local term: summed cross-entropy of every pixel against the modal
  predicted label of its superpixel (a pseudo ground truth rebuilt each
  iteration and treated as a constant);
* a global term: affinity-weighted disagreement between the soft cluster
  distributions of adjacent superpixels;
* a reconstruction term at two resolutions mixing (1 - MS-SSIM) with a
  Gaussian-smoothed mean squared error.

MS-SSIM follows the multi-window formulation: all scales are evaluated at
full resolution with Gaussian windows of increasing sigma instead of a
resolution pyramid, and the coarsest scales are dropped on images too
small to support them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .nnops import (
    cross_entropy_probs,
    gaussian_blur,
    gaussian_kernel1d,
    global_consistency,
    softmax_channels,
)
from .superpixels import SuperpixelMap
from .tensor import Tensor, as_tensor, constant, mean_all


@dataclass(frozen=True)
class LossConfig:
    gamma1: float = 1e-5  # weight of the global consistency term
    gamma2: float = 0.1  # weight of the reconstruction terms
    alpha1: float = 200.0  # deep feature distance scale in the affinity
    alpha2: float = 400.0  # shallow feature distance scale in the affinity
    eta: float = 0.84  # MS-SSIM share of the reconstruction mix
    sigmas: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0, 8.0)
    window: int = 11

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigurationError(f"eta must be in [0, 1], got {self.eta}")
        if self.window % 2 != 1 or self.window < 3:
            raise ConfigurationError(f"window must be odd >= 3, got {self.window}")


@dataclass
class LossBreakdown:
    local: float
    global_: float
    rec_full: float
    rec_half: float
    total: float


def pseudo_gt(labels: np.ndarray, sp: SuperpixelMap) -> np.ndarray:
    """Broadcast the modal predicted label of each superpixel to all of its
    pixels; ties resolve to the lowest cluster index.  Idempotent."""
    if labels.shape != sp.shape:
        raise ConfigurationError(
            f"label map {labels.shape} does not match superpixels {sp.shape}"
        )
    flat = labels.reshape(-1)
    modal = np.empty(sp.k, dtype=np.int64)
    for k, idx in enumerate(sp.pixels()):
        modal[k] = np.argmax(np.bincount(flat[idx]))
    return modal[sp.labels]


def loss_local(scores: Tensor | np.ndarray, target: np.ndarray) -> Tensor:
    """Summed softmax cross-entropy of the scores against a fixed integer
    label map (probabilities floored at 1e-12 before the log)."""
    scores = as_tensor(scores)
    return cross_entropy_probs(softmax_channels(scores), target)


def loss_global(h: Tensor | np.ndarray, a: np.ndarray) -> Tensor:
    """Affinity-weighted cluster disagreement, normalised by the total
    affinity mass; lives in [0, 1]."""
    return global_consistency(as_tensor(h), a)


def _scale_count(shape: tuple[int, int], cfg: LossConfig) -> int:
    """Largest m such that window * 2^(m-1) fits the smaller image side."""
    short = min(shape)
    m = 0
    for j in range(len(cfg.sigmas)):
        if cfg.window * (2**j) <= short:
            m = j + 1
    if m == 0:
        raise ConfigurationError(
            f"image {shape} smaller than the {cfg.window}-tap analysis window"
        )
    return m


_C1 = 0.01**2
_C2 = 0.03**2


def _ssim_terms(x: Tensor, y: Tensor, kernel: np.ndarray) -> tuple[Tensor, Tensor]:
    """Luminance and contrast-structure maps for one Gaussian window."""
    mx = gaussian_blur(x, kernel)
    my = gaussian_blur(y, kernel)
    sxx = gaussian_blur(x * x, kernel) - mx * mx
    syy = gaussian_blur(y * y, kernel) - my * my
    sxy = gaussian_blur(x * y, kernel) - mx * my
    lum = (mx * my * 2.0 + _C1) / (mx * mx + my * my + _C1)
    cs = (sxy * 2.0 + _C2) / (sxx + syy + _C2)
    return lum, cs


def ms_ssim(x: Tensor | np.ndarray, y: Tensor | np.ndarray, cfg: LossConfig = LossConfig()) -> Tensor:
    """Multi-scale structural similarity between two (3, H, W) images in
    [0, 1].  Returns the mean over pixels of the luminance term at the
    coarsest usable scale times the contrast-structure terms of all scales.
    """
    x = as_tensor(x)
    y = as_tensor(y)
    if x.data.shape != y.data.shape or x.data.ndim != 3:
        raise ConfigurationError(
            f"ms_ssim expects matching (C, H, W) images, got {x.shape} and {y.shape}"
        )
    m = _scale_count(x.data.shape[1:], cfg)
    prod: Tensor | None = None
    for j in range(m):
        kernel = gaussian_kernel1d(cfg.sigmas[j], cfg.window)
        lum, cs = _ssim_terms(x, y, kernel)
        prod = cs if prod is None else prod * cs
        if j == m - 1:
            prod = prod * lum
    return mean_all(prod)


def loss_msssim_l2(
    x: Tensor | np.ndarray, y: Tensor | np.ndarray, cfg: LossConfig = LossConfig()
) -> Tensor:
    """eta * (1 - MS-SSIM) plus (1 - eta) times the Gaussian-smoothed mean
    squared error, smoothed with the coarsest usable window."""
    x = as_tensor(x)
    y = as_tensor(y)
    sim = ms_ssim(x, y, cfg)
    m = _scale_count(x.data.shape[1:], cfg)
    kernel = gaussian_kernel1d(cfg.sigmas[m - 1], cfg.window)
    diff = x - y
    smooth_l2 = mean_all(gaussian_blur(diff * diff, kernel))
    return (1.0 - sim) * cfg.eta + smooth_l2 * (1.0 - cfg.eta)


def loss_rec(
    full: tuple[Tensor | np.ndarray, Tensor | np.ndarray],
    half: tuple[Tensor | np.ndarray, Tensor | np.ndarray],
    cfg: LossConfig = LossConfig(),
) -> Tensor:
    """Sum of the mixed reconstruction loss over both resolution pairs."""
    return loss_msssim_l2(*full, cfg) + loss_msssim_l2(*half, cfg)


def total_loss(
    local: Tensor,
    global_: Tensor | float,
    rec_full: Tensor | float,
    rec_half: Tensor | float,
    cfg: LossConfig = LossConfig(),
) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum local + gamma1 * global + gamma2 * (rec_full + rec_half).

    Returns the scalar graph node and a float breakdown for logging.
    Aborts if any component is non-finite, naming the offending term.
    """
    def value(t):
        return float(t.item() if isinstance(t, Tensor) else t)

    def lift(t):
        return t if isinstance(t, Tensor) else constant(float(t))

    for name, term in (
        ("local", local),
        ("global", global_),
        ("rec_full", rec_full),
        ("rec_half", rec_half),
    ):
        if not np.isfinite(value(term)):
            raise DivergenceError(f"non-finite loss component '{name}' ({value(term)})")

    total = (
        lift(local)
        + lift(global_) * cfg.gamma1
        + (lift(rec_full) + lift(rec_half)) * cfg.gamma2
    )
    breakdown = LossBreakdown(
        local=value(local),
        global_=value(global_),
        rec_full=value(rec_full),
        rec_half=value(rec_half),
        total=total.item(),
    )
    return total, breakdown
