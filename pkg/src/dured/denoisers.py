"""Plug-in denoisers and the residual convolutional network.

Complex images are always denoised channel-wise: real and imaginary parts
are filtered independently with the same real operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .core import _check_same_shape, as_image, vdot
from .errors import DataValidationError

__all__ = [
    "DenoiserSpec",
    "gaussian_kernel",
    "denoise",
    "red_regularizer_value",
    "ConvLayerSpec",
    "ResidualConvNet",
    "zw_forward",
]

KINDS = ("identity", "gaussian-blur", "median", "residual-conv-net")


@dataclass(frozen=True)
class DenoiserSpec:
    """Which denoiser to apply and its settings.

    ``sigma`` and ``truncate`` are used by ``gaussian-blur`` (kernel radius
    is ``ceil(truncate * sigma)``), ``size`` by ``median``, ``net`` by
    ``residual-conv-net`` where the denoiser is ``v - Z_w(v)``.
    """

    kind: str = "gaussian-blur"
    sigma: float = 1.0
    truncate: float = 3.0
    size: int = 3
    net: "ResidualConvNet | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown denoiser kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "residual-conv-net" and self.net is None:
            raise ValueError("residual-conv-net denoiser needs a network")

    def __call__(self, x):
        return denoise(self, x)


def gaussian_kernel(sigma: float, truncate: float = 3.0) -> np.ndarray:
    """Normalized, separable-by-construction 2D Gaussian of odd size."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = int(math.ceil(truncate * sigma))
    t = np.arange(-r, r + 1)
    g = np.exp(-(t**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _channelwise(fn, x):
    return fn(x.real) + 1j * fn(x.imag)


def denoise(f: DenoiserSpec, x) -> np.ndarray:
    """Apply ``f`` to a complex image; boundaries wrap around."""
    x = as_image(x)
    if f.kind == "identity":
        return x.copy()
    if f.kind == "gaussian-blur":
        k = gaussian_kernel(f.sigma, f.truncate)
        if k.shape[0] > min(x.shape):
            raise DataValidationError(f"blur kernel of size {k.shape[0]} exceeds image {x.shape}")
        return _channelwise(lambda a: ndimage.correlate(a, k, mode="wrap"), x)
    if f.kind == "median":
        if f.size < 1 or f.size > min(x.shape):
            raise DataValidationError(f"median window {f.size} does not fit image {x.shape}")
        return _channelwise(lambda a: ndimage.median_filter(a, size=f.size, mode="wrap"), x)
    return x - zw_forward(f.net, x)


def red_regularizer_value(f: DenoiserSpec, x, lam: float) -> float:
    """``(lam / 2) * Re <x, x - f(x)>``."""
    x = as_image(x)
    fx = denoise(f, x)
    _check_same_shape(x, fx, "image and denoised image")
    return 0.5 * lam * float(vdot(x, x - fx).real)


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    bias: bool = True


class ResidualConvNet:
    """Plain conv stack predicting the noise residual ``Z_w(v)``.

    Two input and two output channels (real and imaginary parts), zero
    padded same-size convolutions, ``activation`` between layers and a
    linear final layer.

    Parameters
    ----------
    layers : sequence of ConvLayerSpec
    activation : {"leaky_relu", "identity"}
    slope : float
        Negative slope of the leaky rectifier.
    seed : int or None
        Seed for He-normal initialization; the last layer is scaled by
        ``final_scale``. ``None`` leaves every weight at zero.
    """

    def __init__(self, layers, activation="leaky_relu", slope=0.01, seed=0, final_scale=0.1):
        self.layers = tuple(layers)
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if self.layers[0].in_channels != 2 or self.layers[-1].out_channels != 2:
            raise ValueError("network must map 2 channels to 2 channels")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError("consecutive layer channel counts do not match")
        if activation not in ("leaky_relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.slope = slope
        rng = np.random.default_rng(seed) if seed is not None else None
        self.weights = []
        self.biases = []
        for i, spec in enumerate(self.layers):
            shape = (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
            w = np.zeros(shape)
            if rng is not None:
                fan_in = spec.in_channels * spec.kernel_size**2
                w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
                if i == len(self.layers) - 1:
                    w *= final_scale
            self.weights.append(ad.Parameter(w, name=f"conv{i}.weight"))
            self.biases.append(ad.Parameter(np.zeros(spec.out_channels), name=f"conv{i}.bias") if spec.bias else None)

    @classmethod
    def default(cls, depth=4, hidden=16, kernel_size=3, **kwargs) -> "ResidualConvNet":
        """``depth`` layers of ``kernel_size`` convolutions with ``hidden`` channels."""
        if depth < 1:
            raise ValueError("depth must be >= 1")
        chans = [2] + [hidden] * (depth - 1) + [2]
        layers = [ConvLayerSpec(a, b, kernel_size) for a, b in zip(chans, chans[1:])]
        return cls(layers, **kwargs)

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            if b is not None:
                out.append(b)
        return out

    def architecture(self) -> dict:
        return {
            "layers": [[s.in_channels, s.out_channels, s.kernel_size, int(s.bias)] for s in self.layers],
            "activation": self.activation,
            "slope": self.slope,
        }

    @classmethod
    def from_architecture(cls, arch: dict) -> "ResidualConvNet":
        layers = [ConvLayerSpec(a, b, k, bool(bias)) for a, b, k, bias in arch["layers"]]
        return cls(layers, activation=arch["activation"], slope=arch["slope"], seed=None)

    def copy(self) -> "ResidualConvNet":
        net = ResidualConvNet.from_architecture(self.architecture())
        for dst, src in zip(net.parameters(), self.parameters()):
            dst.value = src.value.copy()
        return net

    def __call__(self, v: ad.Tensor) -> ad.Tensor:
        """Graph-building forward on a ``(B, 2, H, W)`` tensor."""
        h = v
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.conv2d(h, w, b)
            if i < last and self.activation == "leaky_relu":
                h = ad.leaky_relu(h, self.slope)
        return h


def zw_forward(net: ResidualConvNet, v) -> np.ndarray:
    """Evaluate the residual ``z = Z_w(v)`` for one complex image."""
    v = as_image(v)
    for p in net.parameters():
        if not np.all(np.isfinite(p.value)):
            raise DataValidationError(f"non-finite weights in {p.name}")
    out = net(ad.Tensor(ad.to_channels(v)[None]))
    return ad.to_complex(out.value[0])
