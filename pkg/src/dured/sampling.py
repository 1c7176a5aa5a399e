"""Variable-density random k-space sampling.

The acquisition probability decays with normalized distance from DC,

    p(k) = exp(-(|k| / mu) ** alpha),

where each axis is mapped to [-0.5, 0.5). Acquired samples are weighted
by ``1/p(k)`` so the expected zero-filled image is the true image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import FULL_2D, ROWS_1D, DIM_MODES, ForwardModel, _check_same_shape, as_image, apply_forward, ifft2c
from .errors import DataValidationError

__all__ = [
    "SamplingPDF",
    "MaskDraw",
    "pdf_eval",
    "pdf_grid",
    "draw_mask",
    "acceleration_factor",
    "expected_acceleration",
    "mu_for_acceleration",
    "zero_filled",
    "average_images",
]

DEFAULT_P_MIN = 1e-4


@dataclass(frozen=True)
class SamplingPDF:
    mu: float
    alpha: float
    height: int
    width: int
    dim_mode: str = FULL_2D
    p_min: float = DEFAULT_P_MIN

    def __post_init__(self):
        if not self.mu > 0 or not self.alpha > 0:
            raise DataValidationError("mu and alpha must be positive")
        if self.height < 1 or self.width < 1:
            raise DataValidationError("grid dimensions must be positive")
        if self.dim_mode not in DIM_MODES:
            raise DataValidationError(f"unknown dim_mode {self.dim_mode!r}")
        if not 0 < self.p_min <= 1:
            raise DataValidationError("p_min must lie in (0, 1]")

    @property
    def shape(self):
        return (self.height, self.width)


@dataclass(frozen=True)
class MaskDraw:
    """One random realization of a :class:`SamplingPDF`."""

    mask: np.ndarray
    weights: np.ndarray
    seed: int
    pdf: SamplingPDF = field(repr=False)

    def forward_model(self) -> ForwardModel:
        return ForwardModel(self.mask, self.weights, self.pdf.dim_mode)


def _normalized_radius(pdf: SamplingPDF, ky, kx):
    ry = (np.asarray(ky) - pdf.height // 2) / pdf.height
    if pdf.dim_mode == ROWS_1D:
        return np.abs(ry) + 0.0 * np.asarray(kx)
    rx = (np.asarray(kx) - pdf.width // 2) / pdf.width
    return np.hypot(ry, rx)


def _prob(pdf, radius):
    # floor at the smallest normal double so p stays strictly positive far from DC
    return np.maximum(np.exp(-((radius / pdf.mu) ** pdf.alpha)), np.finfo(np.float64).tiny)


def pdf_eval(pdf: SamplingPDF, k) -> float:
    """Acquisition probability at grid location ``k = (row, col)``."""
    row, col = k
    if not (0 <= row < pdf.height and 0 <= col < pdf.width):
        raise IndexError(f"location {k} outside {pdf.shape} grid")
    return float(_prob(pdf, _normalized_radius(pdf, row, col)))


def pdf_grid(pdf: SamplingPDF) -> np.ndarray:
    """Probability at every grid location, shape ``(H, W)``."""
    rows, cols = np.meshgrid(np.arange(pdf.height), np.arange(pdf.width), indexing="ij")
    return _prob(pdf, _normalized_radius(pdf, rows, cols))


def draw_mask(pdf: SamplingPDF, seed: int) -> MaskDraw:
    """Draw an independent Bernoulli mask; DC is always acquired.

    In rows-only mode one Bernoulli trial is made per row (phase-encode
    line) and the whole row is acquired together.
    """
    rng = np.random.default_rng(seed)
    p = pdf_grid(pdf)
    if pdf.dim_mode == ROWS_1D:
        rows = rng.random(pdf.height) < p[:, 0]
        rows[pdf.height // 2] = True
        mask = np.repeat(rows[:, None], pdf.width, axis=1)
    else:
        mask = rng.random(pdf.shape) < p
        mask[pdf.height // 2, pdf.width // 2] = True
    weights = np.where(mask, 1.0 / np.maximum(p, pdf.p_min), 0.0)
    return MaskDraw(mask=mask, weights=weights, seed=int(seed), pdf=pdf)


def acceleration_factor(draw: MaskDraw) -> float:
    """Total grid locations over acquired locations (rows in 1D mode)."""
    if draw.pdf.dim_mode == ROWS_1D:
        return draw.mask.shape[0] / int(draw.mask.any(axis=1).sum())
    return draw.mask.size / int(draw.mask.sum())


def expected_acceleration(pdf: SamplingPDF) -> float:
    """``1 / mean(p)``, counting the forced DC sample."""
    p = pdf_grid(pdf)
    if pdf.dim_mode == ROWS_1D:
        col = p[:, 0].copy()
        col[pdf.height // 2] = 1.0
        return 1.0 / col.mean()
    p[pdf.height // 2, pdf.width // 2] = 1.0
    return 1.0 / p.mean()


def mu_for_acceleration(target: float, alpha: float, height: int, width: int, dim_mode=FULL_2D) -> float:
    """Find ``mu`` whose expected acceleration equals ``target``."""
    if target < 1:
        raise ValueError("target acceleration must be >= 1")

    def gap(log_mu):
        return expected_acceleration(SamplingPDF(np.exp(log_mu), alpha, height, width, dim_mode)) - target

    return float(np.exp(brentq(gap, np.log(1e-4), np.log(1e3), xtol=1e-12)))


def zero_filled(A: ForwardModel, x_true) -> np.ndarray:
    """Density-compensated zero-filled reconstruction of ``x_true``.

    This is ``ifft2c(A x)``; the ``1/p`` weights are applied once, which
    keeps its expectation over mask draws equal to ``x_true``.
    """
    x = as_image(x_true)
    _check_same_shape(x, A.mask, "image and mask")
    return ifft2c(apply_forward(A, x))


def average_images(images) -> np.ndarray:
    """Elementwise mean, accumulated in list order."""
    images = list(images)
    if not images:
        raise ValueError("cannot average an empty list of images")
    acc = as_image(images[0]).copy()
    for img in images[1:]:
        img = as_image(img)
        _check_same_shape(acc, img, "images")
        acc += img
    return acc / len(images)
