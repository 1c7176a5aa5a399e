"""Unrolled ADMM-RED network trained on pairs of undersampled images.

Each module performs four updates on the state ``(x, z, v, u)``::

    x <- (A^H A + beta I)^-1 (A^H y + beta (v - u))     # conjugate gradients
    z <- Z_w(v)                                          # learned residual
    v <- -(lam / beta) z + (x + u)
    u <- u + (x - v)

starting from ``x = v = ifft2c(y)`` and ``u = 0``. ``lam``, ``beta`` and
the convolution weights are trained jointly. The loss compares the output
for one undersampling pattern with the zero-filled image of a second,
independent pattern of the same scan, so no fully sampled data is needed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .core import ForwardModel, _check_same_shape, apply_forward, as_image, ifft2c, phase_shift_translate
from .denoisers import ResidualConvNet
from .errors import DivergenceError, NonFiniteGradientError
from .sampling import MaskDraw, SamplingPDF, draw_mask

__all__ = [
    "DuredConfig",
    "DuredParams",
    "UnrolledState",
    "TrainingSample",
    "TrainResult",
    "dured_forward",
    "dured_graph",
    "n2n_loss",
    "make_training_sample",
    "simulate_pairs",
    "augment",
    "train",
]

logger = logging.getLogger(__name__)

_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class DuredConfig:
    n_modules: int = 2
    cg_iters: int = 15
    lambda_init: float = 10.0
    beta_init: float = 10.0
    depth: int = 4
    hidden: int = 16
    kernel_size: int = 3
    activation: str = "leaky_relu"
    shared_denoiser: bool = True
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 10
    augment: bool = True
    augment_repeats: int = 1
    max_shift_fraction: float = 0.25
    beta_floor: float = 1e-6

    def __post_init__(self):
        for name in ("n_modules", "cg_iters", "depth", "hidden", "batch_size", "augment_repeats"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class DuredParams:
    """Trainable state: the two penalty scalars and one or more networks."""

    lam: ad.Parameter
    beta: ad.Parameter
    nets: list
    clamp_events: int = 0

    @classmethod
    def initialize(cls, cfg: DuredConfig, seed: int = 0) -> "DuredParams":
        n_nets = 1 if cfg.shared_denoiser else cfg.n_modules
        nets = [
            ResidualConvNet.default(
                cfg.depth, cfg.hidden, cfg.kernel_size, activation=cfg.activation, seed=seed + i
            )
            for i in range(n_nets)
        ]
        return cls(ad.Parameter(cfg.lambda_init, "lambda"), ad.Parameter(cfg.beta_init, "beta"), nets)

    def net_for(self, module: int) -> ResidualConvNet:
        return self.nets[module % len(self.nets)]

    def parameters(self) -> list:
        out = [self.lam, self.beta]
        for net in self.nets:
            out.extend(net.parameters())
        return out

    def copy(self) -> "DuredParams":
        lam = ad.Parameter(self.lam.value.copy(), "lambda")
        beta = ad.Parameter(self.beta.value.copy(), "beta")
        new = DuredParams(lam, beta, [n.copy() for n in self.nets], self.clamp_events)
        for dst, src in zip(new.parameters(), self.parameters()):
            dst.adam_m = src.adam_m.copy()
            dst.adam_v = src.adam_v.copy()
            dst.step_count = src.step_count
        return new

    def zero_nets(self):
        for net in self.nets:
            for p in net.parameters():
                p.value = np.zeros_like(p.value)


@dataclass
class UnrolledState:
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    z: np.ndarray | None = None


def _beta_tensor(params: DuredParams, floor: float):
    if params.beta.value > 0:
        return params.beta
    params.clamp_events += 1
    logger.warning("beta=%g is not positive; clamping to %g", float(params.beta.value), floor)
    return ad.Tensor(floor)


def _cg_graph(aty, w2, beta, x_reg, iters):
    """Unrolled CG for ``(A^H A + beta I) x = aty + beta x_reg`` from zero."""
    rhs = aty + beta * x_reg
    x = ad.Tensor(np.zeros(rhs.shape))
    r = rhs
    p = r
    rr = ad.inner(r, r)
    for _ in range(iters):
        Ap = ad.ifft2c(ad.fft2c(p) * w2) + beta * p
        alpha = rr / (ad.inner(p, Ap) + _TINY)
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = ad.inner(r, r)
        p = r + (rr_new / (rr + _TINY)) * p
        rr = rr_new
    return x


def dured_graph(y, weights, params: DuredParams, cfg: DuredConfig, keep_states=False):
    """Build the unrolled graph for a batch.

    Parameters
    ----------
    y : ndarray, ``(B, 2, H, W)``
        Measured k-space in channel form (already masked and weighted).
    weights : ndarray, ``(B, 1, H, W)``
        ``mask * 1/p`` for every batch item.

    Returns
    -------
    x : Tensor
        Final reconstruction, ``(B, 2, H, W)``.
    states : list of (x, z, v, u) tensors per module, if ``keep_states``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    w2 = ad.Tensor(weights**2)
    aty = ad.ifft2c(ad.Tensor(np.asarray(y) * weights))
    x = v = ad.ifft2c(ad.Tensor(y))
    u = ad.Tensor(np.zeros(x.shape))
    beta = _beta_tensor(params, cfg.beta_floor)
    ratio = params.lam / beta
    states = []
    for n in range(cfg.n_modules):
        x = _cg_graph(aty, w2, beta, v - u, cfg.cg_iters)
        z = params.net_for(n)(v)
        v = x + u - ratio * z
        u = u + (x - v)
        if keep_states:
            states.append((x, z, v, u))
    return (x, states) if keep_states else x


def dured_forward(y, A: ForwardModel, cfg: DuredConfig, params: DuredParams, return_states=False):
    """Reconstruct one image from its measured k-space ``y``."""
    y = as_image(y, "measurement")
    _check_same_shape(y, A.mask, "measurement and mask")
    out, states = dured_graph(
        ad.to_channels(y)[None], A.effective_weights[None, None], params, cfg, keep_states=True
    )
    x = ad.to_complex(out.value[0])
    if not return_states:
        return x
    history = [
        UnrolledState(*(ad.to_complex(t.value[0]) for t in (xs, vs, us, zs))) for xs, zs, vs, us in states
    ]
    return x, history


def n2n_loss(x_out, target) -> float:
    """Squared error summed over real and imaginary parts, divided by pixel count."""
    x_out, target = as_image(x_out), as_image(target, "target")
    _check_same_shape(x_out, target, "output and target")
    d = x_out - target
    return float(np.sum(d.real**2 + d.imag**2) / d.size)


@dataclass(frozen=True)
class TrainingSample:
    input_draw: MaskDraw
    target_draw: MaskDraw
    y1: np.ndarray
    y2: np.ndarray
    target_image: np.ndarray = field(repr=False)


def make_training_sample(x_true, pdf: SamplingPDF, seed_input: int, seed_target: int) -> TrainingSample:
    """Simulate two independent acquisitions of the same image."""
    if seed_input == seed_target:
        logger.debug("input and target share seed %d; the pair is degenerate", seed_input)
    d1, d2 = draw_mask(pdf, seed_input), draw_mask(pdf, seed_target)
    A1, A2 = d1.forward_model(), d2.forward_model()
    y2 = apply_forward(A2, x_true)
    return TrainingSample(d1, d2, apply_forward(A1, x_true), y2, ifft2c(y2))


def simulate_pairs(images, pdf: SamplingPDF, seed: int) -> list:
    """One training pair per image, with mask seeds derived from ``seed``."""
    images = list(images)
    seeds = np.random.default_rng(seed).integers(0, 2**62, size=(len(images), 2))
    return [make_training_sample(x, pdf, int(a), int(b)) for x, (a, b) in zip(images, seeds)]


def augment(sample: TrainingSample, dx: int, dy: int) -> TrainingSample:
    """Translate the underlying scan by ``(dx, dy)`` via a k-space phase ramp."""
    if dx == 0 and dy == 0:
        return sample
    y1 = phase_shift_translate(sample.y1, dx, dy)
    y2 = phase_shift_translate(sample.y2, dx, dy)
    return replace(sample, y1=y1, y2=y2, target_image=ifft2c(y2))


@dataclass
class TrainResult:
    params: DuredParams
    epoch_losses: list
    clamp_events: int = 0


def _batch_loss(batch, params, cfg):
    y = np.stack([ad.to_channels(s.y1) for s in batch])
    w = np.stack([s.input_draw.mask * s.input_draw.weights for s in batch])[:, None]
    t = np.stack([ad.to_channels(s.target_image) for s in batch])
    out = dured_graph(y, w, params, cfg)
    h, wd = batch[0].y1.shape
    return ad.sum_squares(out - ad.Tensor(t)) / float(len(batch) * h * wd)


def train(dataset, cfg: DuredConfig, seed: int, params: DuredParams | None = None, log_every: int = 0):
    """Mini-batch Adam on the pair loss through the unrolled graph.

    Sample order and augmentation shifts come from ``seed`` alone, so a
    given ``(dataset, cfg, seed)`` always yields the same loss curve.
    Raises :class:`DivergenceError` carrying the last good parameters if
    the loss turns non-finite.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training set is empty")
    if params is None:
        params = DuredParams.initialize(cfg, seed)
    rng = np.random.default_rng(seed)
    h, w = dataset[0].y1.shape
    max_dy, max_dx = int(h * cfg.max_shift_fraction), int(w * cfg.max_shift_fraction)
    plist = params.parameters()
    losses = []
    for epoch in range(cfg.epochs):
        good = params.copy()
        total, count = 0.0, 0
        for _ in range(cfg.augment_repeats):
            order = rng.permutation(len(dataset))
            shifts = rng.integers((-max_dy, -max_dx), (max_dy + 1, max_dx + 1), size=(len(dataset), 2))
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                if cfg.augment:
                    batch = [augment(dataset[i], int(shifts[i, 1]), int(shifts[i, 0])) for i in idx]
                else:
                    batch = [dataset[i] for i in idx]
                loss = _batch_loss(batch, params, cfg)
                value = float(loss.value)
                if not np.isfinite(value):
                    raise DivergenceError(f"loss became {value} in epoch {epoch}", losses, good)
                ad.backward(loss, plist)
                try:
                    ad.adam_step(plist, lr=cfg.lr)
                except NonFiniteGradientError as exc:
                    raise DivergenceError(str(exc), losses, good) from exc
                total += value * len(idx)
                count += len(idx)
        losses.append(total / count)
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d loss %.6g lambda %.4g beta %.4g", epoch + 1, losses[-1],
                        float(params.lam.value), float(params.beta.value))
    return TrainResult(params, losses, params.clamp_events)
