"""Network and loss building blocks with hand-derived backward passes.

Spatial tensors are channel-first (C, H, W).  Convolutions are stride 1
with zero 'same' padding and kernel size 1 or 3; the upsampling transposed
convolution uses a 2x2 kernel with stride 2.  Everything runs in float64.

``bicubic_down2`` is plain array code: it only ever touches the raw input
image, so it carries no gradient.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError
from .tensor import Tensor, as_tensor, sigmoid

PROB_FLOOR = 1e-12  # probability clamp applied before any log


# ---------------------------------------------------------------------------
# convolution


def _corr2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of (C, H, W) with (O, C, k, k) -> (O, H', W')."""
    win = sliding_window_view(x, w.shape[2:], axis=(1, 2))  # (C, H', W', k, k)
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded stride-1 convolution, kernel size 1 or 3."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ConfigurationError(
            f"conv2d expects (C,H,W) and (O,C,k,k), got {x.shape} and {weight.shape}"
        )
    o, cin, kh, kw = weight.data.shape
    if kh != kw or kh not in (1, 3):
        raise ConfigurationError(f"conv2d kernel must be 1x1 or 3x3, got {kh}x{kw}")
    if x.data.shape[0] != cin:
        raise ConfigurationError(
            f"conv2d channel mismatch: input has {x.data.shape[0]}, weight expects {cin}"
        )
    if bias is not None and bias.data.shape != (o,):
        raise ConfigurationError(f"conv2d bias shape {bias.data.shape} != ({o},)")
    p = kh // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    y = _corr2d(xp, weight.data)
    if bias is not None:
        y += bias.data[:, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(y, parents=parents)

    def bwd():
        g = out.grad
        if bias is not None:
            bias.accumulate(g.sum(axis=(1, 2)))
        if weight.requires_grad:
            win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
            weight.accumulate(np.tensordot(g, win, axes=([1, 2], [1, 2])))
        if x.requires_grad:
            gq = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            dxp = _corr2d(gq, wflip)
            h, w_ = x.data.shape[1:]
            x.accumulate(dxp[:, p : p + h, p : p + w_])

    out._set(bwd)
    return out


def transposed_conv2(x: Tensor, weight: Tensor) -> Tensor:
    """2x upsampling via a 2x2 stride-2 transposed convolution (no bias)."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    cin, o, kh, kw = weight.data.shape
    if (kh, kw) != (2, 2):
        raise ConfigurationError(f"transposed_conv2 kernel must be 2x2, got {kh}x{kw}")
    if x.data.shape[0] != cin:
        raise ConfigurationError(
            f"transposed_conv2 channel mismatch: {x.data.shape[0]} vs {cin}"
        )
    c, h, w = x.data.shape
    y = np.einsum("chw,couv->ohuwv", x.data, weight.data).reshape(o, 2 * h, 2 * w)
    out = Tensor(y, parents=(x, weight))

    def bwd():
        gr = out.grad.reshape(o, h, 2, w, 2)
        if x.requires_grad:
            x.accumulate(np.einsum("ohuwv,couv->chw", gr, weight.data))
        if weight.requires_grad:
            weight.accumulate(np.einsum("chw,ohuwv->couv", x.data, gr))

    out._set(bwd)
    return out


# ---------------------------------------------------------------------------
# normalisation and activation


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation using the current image's own statistics.

    There are no running averages: inference behaves exactly like training,
    which is what a network fit to a single image wants.  A constant channel
    normalises to zero and comes out as beta.
    """
    x = as_tensor(x)
    c, h, w = x.data.shape
    m = h * w
    if m < 2:
        raise ConfigurationError("batchnorm needs at least 2 spatial elements")
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    var = x.data.var(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = gamma.data[:, None, None] * xhat + beta.data[:, None, None]
    out = Tensor(y, parents=(x, gamma, beta))

    def bwd():
        g = out.grad
        beta.accumulate(g.sum(axis=(1, 2)))
        gamma.accumulate((g * xhat).sum(axis=(1, 2)))
        if x.requires_grad:
            gm = g.mean(axis=(1, 2), keepdims=True)
            gx = (g * xhat).mean(axis=(1, 2), keepdims=True)
            x.accumulate(gamma.data[:, None, None] * inv * (g - gm - xhat * gx))

    out._set(bwd)
    return out


def relu_tanh(x: Tensor, w_relu: float = 1.0, w_tanh: float = 0.4) -> Tensor:
    """Weighted sum of ReLU and tanh: unbounded above, saturating below."""
    x = as_tensor(x)
    t = np.tanh(x.data)
    y = w_relu * np.maximum(x.data, 0.0) + w_tanh * t
    out = Tensor(y, parents=(x,))
    out._set(lambda: x.accumulate(out.grad * (w_relu * (x.data > 0) + w_tanh * (1.0 - t * t))))
    return out


def maxpool2(x: Tensor) -> Tensor:
    """2x2 stride-2 max pooling; ties route the gradient to the first
    maximum in row-major window order."""
    x = as_tensor(x)
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = (
        x.data.reshape(c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h // 2, w // 2, 4)
    )
    idx = win.argmax(axis=-1)  # first max in row-major window order
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    out = Tensor(y, parents=(x,))

    def bwd():
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, idx[..., None], out.grad[..., None], axis=-1)
        x.accumulate(
            dwin.reshape(c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 3, 2, 4)
            .reshape(c, h, w)
        )

    out._set(bwd)
    return out


# ---------------------------------------------------------------------------
# fixed-kernel resampling (no gradient: applied to the raw image only)

# Half-pel taps of the a=-0.5 cubic kernel evaluated at |1.5|, |0.5|.
_CUBIC_TAPS = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0


def _cubic_down_axis(x: np.ndarray, axis: int) -> np.ndarray:
    n = x.shape[axis]
    xe = np.concatenate(
        [np.take(x, [0], axis), x, np.take(x, [n - 1, n - 1], axis)], axis
    )
    parts = []
    for t, w in enumerate(_CUBIC_TAPS):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(t, t + n, 2)
        parts.append(w * xe[tuple(sl)])
    return parts[0] + parts[1] + parts[2] + parts[3]


def bicubic_down2(image: np.ndarray) -> np.ndarray:
    """Downsample (C, H, W) by 2 with the a=-0.5 bicubic kernel.

    Output sample centers sit at the input coordinates 2i + 0.5, midway
    between input samples, which reduces the kernel to the separable taps
    [-1, 9, 9, -1]/16.  Borders replicate the edge sample.
    """
    image = np.asarray(image, dtype=np.float64)
    c, h, w = image.shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"bicubic_down2 needs even spatial dims, got {h}x{w}")
    return _cubic_down_axis(_cubic_down_axis(image, 1), 2)


# ---------------------------------------------------------------------------
# efficient channel attention


def spatial_mean(x: Tensor) -> Tensor:
    """(C, H, W) -> (C,): global average pooling."""
    x = as_tensor(x)
    c, h, w = x.data.shape
    out = Tensor(x.data.mean(axis=(1, 2)), parents=(x,))
    out._set(lambda: x.accumulate(np.repeat(out.grad, h * w).reshape(c, h, w) / (h * w)))
    return out


def conv1d_channels(v: Tensor, weight: Tensor) -> Tensor:
    """1D convolution of a (C,) vector along the channel axis, zero 'same'
    padding, single input/output channel, no bias."""
    v = as_tensor(v)
    weight = as_tensor(weight)
    (k,) = weight.data.shape
    (c,) = v.data.shape
    if c < k:
        raise ConfigurationError(f"conv1d_channels needs >= {k} channels, got {c}")
    r = k // 2
    vp = np.pad(v.data, r)
    win = sliding_window_view(vp, k)
    out = Tensor(win @ weight.data, parents=(v, weight))

    def bwd():
        g = out.grad
        if v.requires_grad:
            v.accumulate(np.convolve(g, weight.data, mode="full")[r : r + c])
        if weight.requires_grad:
            weight.accumulate(win.T @ g)

    out._set(bwd)
    return out


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each channel of (C, H, W) by the matching entry of (C,)."""
    x = as_tensor(x)
    s = as_tensor(s)
    out = Tensor(x.data * s.data[:, None, None], parents=(x, s))

    def bwd():
        if x.requires_grad:
            x.accumulate(out.grad * s.data[:, None, None])
        if s.requires_grad:
            s.accumulate((out.grad * x.data).sum(axis=(1, 2)))

    out._set(bwd)
    return out


def eca_attention(x: Tensor, weight: Tensor) -> Tensor:
    """Per-channel gating: sigmoid of a 1D conv over the pooled channel
    descriptor, multiplied back onto the input."""
    return channel_scale(x, sigmoid(conv1d_channels(spatial_mean(x), weight)))


# ---------------------------------------------------------------------------
# shape plumbing


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.data.shape[1:] != b.data.shape[1:]:
        raise ConfigurationError(
            f"concat_channels spatial mismatch: {a.shape} vs {b.shape}"
        )
    ca = a.data.shape[0]
    out = Tensor(np.concatenate([a.data, b.data], axis=0), parents=(a, b))

    def bwd():
        a.accumulate(out.grad[:ca])
        b.accumulate(out.grad[ca:])

    out._set(bwd)
    return out


def crop2d(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left (h, w) window; the gradient zero-extends."""
    x = as_tensor(x)
    out = Tensor(x.data[:, :h, :w], parents=(x,))

    def bwd():
        g = np.zeros_like(x.data)
        g[:, :h, :w] = out.grad
        x.accumulate(g)

    out._set(bwd)
    return out


# ---------------------------------------------------------------------------
# separable Gaussian filtering (fixed kernel, reflect borders)


def gaussian_kernel1d(sigma: float, size: int) -> np.ndarray:
    if size % 2 != 1 or size < 3:
        raise ConfigurationError(f"gaussian window size must be odd >= 3, got {size}")
    t = np.arange(size) - size // 2
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _corr_axis(a: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    win = sliding_window_view(a, k.size, axis=axis)
    return np.tensordot(win, k, axes=([-1], [0]))


def _fold_reflect_axis(g: np.ndarray, r: int, axis: int) -> np.ndarray:
    """Adjoint of numpy 'reflect' padding along one axis."""
    n = g.shape[axis] - 2 * r

    def take(i):
        sl = [slice(None)] * g.ndim
        sl[axis] = i
        return tuple(sl)

    core = g[take(slice(r, r + n))].copy()
    for t in range(1, r + 1):
        core[take(t)] += g[take(r - t)]
        core[take(n - 1 - t)] += g[take(r + n - 1 + t)]
    return core


def gaussian_blur(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Separable correlation of (C, H, W) with a fixed symmetric 1D kernel,
    reflect-padded so output size matches input."""
    x = as_tensor(x)
    r = kernel.size // 2
    c, h, w = x.data.shape
    if h <= r or w <= r:
        raise ConfigurationError(
            f"image {h}x{w} too small for a blur window of {kernel.size}"
        )
    xp = np.pad(x.data, ((0, 0), (r, r), (r, r)), mode="reflect")
    y = _corr_axis(_corr_axis(xp, kernel, 1), kernel, 2)
    out = Tensor(y, parents=(x,))

    def bwd():
        gp = np.pad(out.grad, ((0, 0), (r, r), (r, r)))
        gfull = _corr_axis(np.pad(gp, ((0, 0), (r, r), (0, 0))), kernel, 1)
        gfull = _corr_axis(np.pad(gfull, ((0, 0), (0, 0), (r, r))), kernel, 2)
        x.accumulate(_fold_reflect_axis(_fold_reflect_axis(gfull, r, 1), r, 2))

    out._set(bwd)
    return out


# ---------------------------------------------------------------------------
# segment aggregation and the loss heads


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 0 of (Q, H, W)."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=0, keepdims=True)
    out = Tensor(s, parents=(x,))

    def bwd():
        g = out.grad
        x.accumulate(s * (g - (g * s).sum(axis=0, keepdims=True)))

    out._set(bwd)
    return out


def segment_mean(x: Tensor, seg: np.ndarray, k: int) -> Tensor:
    """Average (Q, H, W) values over each of k segments -> (k, Q)."""
    x = as_tensor(x)
    q = x.data.shape[0]
    flat = x.data.reshape(q, -1)
    ids = seg.reshape(-1)
    counts = np.bincount(ids, minlength=k).astype(np.float64)
    if np.any(counts == 0):
        raise ConfigurationError("segment_mean: empty segment")
    sums = np.empty((k, q))
    for j in range(q):
        sums[:, j] = np.bincount(ids, weights=flat[j], minlength=k)
    out = Tensor(sums / counts[:, None], parents=(x,))

    def bwd():
        w = out.grad / counts[:, None]  # (k, Q)
        x.accumulate(w[ids].T.reshape(x.data.shape))

    out._set(bwd)
    return out


def region_mu_sigma(x: Tensor, seg: np.ndarray, k: int) -> Tensor:
    """Per-segment mean plus population standard deviation of (Q, H, W),
    returned as (k, Q).  The sigma term's gradient is dropped where sigma
    is exactly zero (constant segment)."""
    x = as_tensor(x)
    q = x.data.shape[0]
    flat = x.data.reshape(q, -1)
    ids = seg.reshape(-1)
    counts = np.bincount(ids, minlength=k).astype(np.float64)
    if np.any(counts == 0):
        raise ConfigurationError("region_mu_sigma: empty segment")
    sums = np.empty((k, q))
    sqs = np.empty((k, q))
    for j in range(q):
        sums[:, j] = np.bincount(ids, weights=flat[j], minlength=k)
        sqs[:, j] = np.bincount(ids, weights=flat[j] * flat[j], minlength=k)
    mu = sums / counts[:, None]
    var = np.maximum(sqs / counts[:, None] - mu * mu, 0.0)
    sd = np.sqrt(var)
    out = Tensor(mu + sd, parents=(x,))

    def bwd():
        g = out.grad
        a = g / counts[:, None]
        safe = np.where(sd > 0, sd, 1.0)
        b = np.where(sd > 0, g / (counts[:, None] * safe), 0.0)
        dx = a[ids].T + b[ids].T * (flat - mu[ids].T)
        x.accumulate(dx.reshape(x.data.shape))

    out._set(bwd)
    return out


def cross_entropy_probs(p: Tensor, labels: np.ndarray) -> Tensor:
    """Summed negative log-likelihood of integer labels under (Q, H, W)
    probabilities, clamped below at PROB_FLOOR before the log."""
    p = as_tensor(p)
    if labels.shape != p.data.shape[1:]:
        raise ConfigurationError(
            f"label map {labels.shape} does not match scores {p.data.shape}"
        )
    lab = labels[None, ...]
    picked = np.take_along_axis(p.data, lab, axis=0)[0]
    clamped = np.maximum(picked, PROB_FLOOR)
    out = Tensor(-np.log(clamped).sum(), parents=(p,))

    def bwd():
        g = float(out.grad)
        dpick = np.where(picked > PROB_FLOOR, -g / clamped, 0.0)
        dp = np.zeros_like(p.data)
        np.put_along_axis(dp, lab, dpick[None], axis=0)
        p.accumulate(dp)

    out._set(bwd)
    return out


def global_consistency(h: Tensor, a: np.ndarray) -> Tensor:
    """Affinity-weighted disagreement tr(H^T A (1 - H)) / sum(A).

    ``a`` is a fixed coefficient matrix: no gradient flows through it.
    Returns 0 when the affinity matrix has no mass (single segment).
    """
    h = as_tensor(h)
    total = a.sum()
    if total == 0.0:
        return Tensor(0.0)
    hd = h.data
    val = float((a * (hd @ (1.0 - hd).T)).sum() / total)
    out = Tensor(val, parents=(h,))

    def bwd():
        g = float(out.grad)
        h.accumulate(g * (a @ (1.0 - hd) - a.T @ hd) / total)

    out._set(bwd)
    return out
