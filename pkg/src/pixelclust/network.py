"""The per-image clustering network.

Two feature extraction blocks read the image at full and half resolution,
two more mix the pooled/upsampled streams, a 1x1 head scores Q candidate
clusters per pixel, and two auxiliary 1x1 heads reconstruct the image at
both resolutions.  Every block is a residual pair: a conv+batchnorm
shortcut plus a two-conv stack gated by efficient channel attention.

The network is trained from scratch on every image; there is no notion of
a dataset, so batch statistics always come from the image at hand.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .nnops import (
    batchnorm,
    bicubic_down2,
    concat_channels,
    conv2d,
    crop2d,
    eca_attention,
    maxpool2,
    relu_tanh,
    transposed_conv2,
)
from .tensor import Parameter, Tensor, constant

MAGIC = b"PXCSEG01"

RELU_WEIGHT = 1.0
TANH_WEIGHT = 0.4

ECA_KERNEL = 3

# channel widths: full-res stream, half-res stream, fused streams
WIDTHS = (64, 64, 128, 128)


def _act(x):
    return relu_tanh(x, RELU_WEIGHT, TANH_WEIGHT)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _Conv:
    def __init__(self, reg, name, cin, cout, k, bias=True):
        self.weight = reg(f"{name}.weight", _uniform(reg.rng, (cout, cin, k, k), cin * k * k))
        self.bias = reg(f"{name}.bias", np.zeros(cout)) if bias else None

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias)


class _BatchNorm:
    def __init__(self, reg, name, c, eps=1e-5):
        self.gamma = reg(f"{name}.gamma", np.ones(c))
        self.beta = reg(f"{name}.beta", np.zeros(c))
        self.eps = eps

    def __call__(self, x):
        return batchnorm(x, self.gamma, self.beta, self.eps)


class _Eca:
    def __init__(self, reg, name, k=ECA_KERNEL):
        self.weight = reg(f"{name}.weight", _uniform(reg.rng, (k,), k))

    def __call__(self, x):
        return eca_attention(x, self.weight)


class _Registry:
    """Collects parameters in construction order under unique names."""

    def __init__(self, rng):
        self.rng = rng
        self.params: list[Parameter] = []
        self._names: set[str] = set()

    def __call__(self, name, data) -> Parameter:
        if name in self._names:
            raise ConfigurationError(f"duplicate parameter name '{name}'")
        self._names.add(name)
        p = Parameter(data, name)
        self.params.append(p)
        return p


class FemBlock:
    """Residual feature block: conv+BN shortcut plus an attention-gated
    two-conv stack.

    The stack is two units of [BN, activation, conv]; when the block reads
    the raw image the leading BN+activation is dropped (normalising raw
    pixels before the first conv would discard the input scale).
    """

    def __init__(self, reg, name, cin, cout, image_input, use_eca=True):
        self.image_input = image_input
        # Convs feeding straight into a BN skip the bias: the per-channel
        # shift would be normalized away, leaving a parameter whose
        # gradient is identically zero.
        self.sc_conv = _Conv(reg, f"{name}.sc_conv", cin, cout, 3, bias=False)
        self.sc_bn = _BatchNorm(reg, f"{name}.sc_bn", cout)
        self.front_bn = None if image_input else _BatchNorm(reg, f"{name}.front_bn", cin)
        self.conv1 = _Conv(reg, f"{name}.conv1", cin, cout, 3, bias=False)
        self.mid_bn = _BatchNorm(reg, f"{name}.mid_bn", cout)
        self.conv2 = _Conv(reg, f"{name}.conv2", cout, cout, 3)
        self.eca = _Eca(reg, f"{name}.eca") if use_eca else None

    def __call__(self, x):
        shortcut = self.sc_bn(self.sc_conv(x))
        h = x if self.image_input else _act(self.front_bn(x))
        h = self.conv2(_act(self.mid_bn(self.conv1(h))))
        if self.eca is not None:
            h = eca_attention(h, self.eca.weight)
        return shortcut + h


@dataclass
class ForwardResult:
    """One forward pass: cluster scores, reconstructions, hard labels."""

    scores: Tensor  # (Q, H, W), pre-softmax
    recon: Tensor  # (3, H, W)
    recon_half: Tensor  # (3, H2/2, W2/2) at the padded size
    input_half: np.ndarray  # matching half-resolution target
    labels: np.ndarray  # (H, W) argmax cluster ids
    occupied: np.ndarray  # sorted ids that appear in labels


def predict_labels(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel argmax over cluster scores; ties pick the lowest index.

    Returns the label map and the sorted set of occupied cluster ids.
    """
    labels = np.argmax(scores, axis=0)
    return labels, np.unique(labels)


class ClusterNetwork:
    def __init__(self, q: int = 100, seed: int = 0, use_eca: bool = True):
        if q < 2:
            raise ConfigurationError(f"cluster count must be >= 2, got {q}")
        self.q = q
        self.use_eca = use_eca
        w1, w2, w3, w4 = WIDTHS
        reg = _Registry(np.random.default_rng(seed))
        self.f1 = FemBlock(reg, "f1", 3, w1, image_input=True, use_eca=use_eca)
        self.f2 = FemBlock(reg, "f2", 3, w2, image_input=True, use_eca=use_eca)
        self.f3 = FemBlock(reg, "f3", w1 + w2, w3, image_input=False, use_eca=use_eca)
        self.f4 = FemBlock(reg, "f4", w1 + w3, w4, image_input=False, use_eca=use_eca)
        self.up = reg("up.weight", _uniform(reg.rng, (w3, w3, 2, 2), w3 * 4))
        self.head_conv = _Conv(reg, "head_conv", w4, q, 1, bias=False)
        self.head_bn = _BatchNorm(reg, "head_bn", q)
        self.recon_full = _Conv(reg, "recon_full", w4, 3, 1)
        self.recon_half = _Conv(reg, "recon_half", w3, 3, 1)
        self._params = reg.params

    def parameters(self) -> list[Parameter]:
        return list(self._params)

    def forward(self, image: np.ndarray) -> ForwardResult:
        """Run the network on an (H, W, 3) image in [0, 1].

        Odd dimensions are reflect-padded to even before the pipeline and
        the full-resolution outputs are cropped back afterwards.
        """
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ConfigurationError(f"expected an (H, W, 3) image, got {image.shape}")
        h, w = image.shape[:2]
        x = image.transpose(2, 0, 1)
        ph, pw = h % 2, w % 2
        if ph or pw:
            x = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="reflect")
        half = bicubic_down2(x)

        full_in = constant(x)
        a = self.f1(full_in)
        b = self.f2(constant(half))
        c = self.f3(concat_channels(maxpool2(a), b))
        d = self.f4(concat_channels(a, transposed_conv2(c, self.up)))
        scores = self.head_bn(self.head_conv(d))
        recon = self.recon_full(d)
        recon_h = self.recon_half(c)
        if ph or pw:
            scores = crop2d(scores, h, w)
            recon = crop2d(recon, h, w)
        if not np.all(np.isfinite(scores.data)):
            raise DivergenceError("non-finite activation in cluster scores")
        labels, occupied = predict_labels(scores.data)
        return ForwardResult(scores, recon, recon_h, half, labels, occupied)

    # -- parameter snapshots --

    def save(self, path) -> None:
        """Write all parameters as a flat binary snapshot."""
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<iBi", self.q, int(self.use_eca), len(self._params)))
            for p in self._params:
                name = p.name.encode()
                f.write(struct.pack("<H", len(name)))
                f.write(name)
                f.write(struct.pack("<B", p.data.ndim))
                f.write(struct.pack(f"<{p.data.ndim}i", *p.data.shape))
                f.write(np.ascontiguousarray(p.data).tobytes())

    @classmethod
    def load(cls, path) -> "ClusterNetwork":
        with open(path, "rb") as f:
            if f.read(len(MAGIC)) != MAGIC:
                raise ConfigurationError(f"{path}: not a parameter snapshot")
            q, eca_flag, count = struct.unpack("<iBi", f.read(9))
            net = cls(q=q, use_eca=bool(eca_flag))
            by_name = {p.name: p for p in net._params}
            if count != len(net._params):
                raise ConfigurationError(
                    f"{path}: expected {len(net._params)} parameters, found {count}"
                )
            for _ in range(count):
                (nlen,) = struct.unpack("<H", f.read(2))
                name = f.read(nlen).decode()
                (ndim,) = struct.unpack("<B", f.read(1))
                shape = struct.unpack(f"<{ndim}i", f.read(4 * ndim))
                data = np.frombuffer(f.read(8 * int(np.prod(shape))), dtype=np.float64)
                if name not in by_name:
                    raise ConfigurationError(f"{path}: unknown parameter '{name}'")
                p = by_name[name]
                if tuple(shape) != p.data.shape:
                    raise ConfigurationError(
                        f"{path}: shape {shape} for '{name}' != {p.data.shape}"
                    )
                p.data = data.reshape(shape).copy()
                p.momentum = np.zeros_like(p.data)
        return net
