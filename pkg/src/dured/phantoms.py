"""Synthetic complex-valued ground-truth images."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = ["Ellipse", "MODIFIED_SHEPP_LOGAN", "ellipse_phantom", "shepp_logan", "smooth_phase", "phantom_variants"]


class Ellipse(NamedTuple):
    x0: float
    y0: float
    a: float
    b: float
    theta_deg: float
    intensity: float


# Toft's contrast-enhanced table; intensities are additive.
MODIFIED_SHEPP_LOGAN = (
    Ellipse(0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
    Ellipse(0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
    Ellipse(0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
    Ellipse(-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
    Ellipse(0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
    Ellipse(0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
    Ellipse(0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
    Ellipse(-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
    Ellipse(0.0, -0.605, 0.023, 0.023, 0.0, 0.1),
    Ellipse(0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
)

PHASE_MODES = ("none", "smooth")
_BASE_PHASE = (0.0, 0.6, -0.4, 0.3, 0.2, -0.25)


def pixel_grid(h: int, w: int):
    """Pixel-center coordinates on [-1, 1]^2, ``y`` pointing up (row 0 is top)."""
    x = (2 * np.arange(w) + 1) / w - 1
    y = 1 - (2 * np.arange(h) + 1) / h
    return np.meshgrid(x, y)


def ellipse_support(e: Ellipse, X, Y) -> np.ndarray:
    t = np.deg2rad(e.theta_deg)
    c, s = np.cos(t), np.sin(t)
    dx, dy = X - e.x0, Y - e.y0
    return ((dx * c + dy * s) / e.a) ** 2 + ((-dx * s + dy * c) / e.b) ** 2 <= 1.0


def ellipse_phantom(h: int, w: int, ellipses=MODIFIED_SHEPP_LOGAN) -> np.ndarray:
    """Sum of constant-intensity ellipses, real-valued, clipped to >= 0."""
    X, Y = pixel_grid(h, w)
    img = np.zeros((h, w))
    for e in ellipses:
        img[ellipse_support(e, X, Y)] += e.intensity
    # cancellation like 1 - 0.8 - 0.2 leaves -4e-17
    return np.clip(img, 0.0, None)


def smooth_phase(h: int, w: int, coeffs=_BASE_PHASE) -> np.ndarray:
    """Second-order polynomial phase map ``c0 + c1 x + c2 y + c3 x^2 + c4 y^2 + c5 x y``."""
    X, Y = pixel_grid(h, w)
    c0, c1, c2, c3, c4, c5 = coeffs
    return c0 + c1 * X + c2 * Y + c3 * X**2 + c4 * Y**2 + c5 * X * Y


def shepp_logan(h: int, w: int | None = None, phase_mode: str = "none") -> np.ndarray:
    """Ten-ellipse Shepp-Logan phantom with intensities in [0, 1].

    With ``phase_mode="smooth"`` the magnitude image is multiplied by a
    fixed low-order polynomial phase so the result is genuinely complex.
    """
    w = h if w is None else w
    if h < 8 or w < 8:
        raise ValueError("phantom dimensions must be at least 8")
    if phase_mode not in PHASE_MODES:
        raise ValueError(f"phase_mode must be one of {PHASE_MODES}")
    img = np.minimum(ellipse_phantom(h, w), 1.0).astype(np.complex128)
    if phase_mode == "smooth":
        img *= np.exp(1j * smooth_phase(h, w))
    return img


def _rotate(e: Ellipse, deg: float, scale: float, gain: float) -> Ellipse:
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return Ellipse(
        scale * (c * e.x0 - s * e.y0),
        scale * (s * e.x0 + c * e.y0),
        scale * e.a,
        scale * e.b,
        e.theta_deg + deg,
        e.intensity * gain,
    )


def phantom_variants(
    n: int,
    seed: int,
    h: int = 64,
    w: int | None = None,
    base=MODIFIED_SHEPP_LOGAN,
    max_rotation: float = 20.0,
    jitter: float = 0.1,
    scale_jitter: float = 0.05,
    phase_mode: str = "smooth",
) -> list:
    """Deterministic family of perturbed phantoms.

    Each variant rotates the whole ellipse table by a uniform angle in
    ``[-max_rotation, max_rotation]`` degrees, shrinks it by up to
    ``scale_jitter``, rescales every ellipse intensity by ``1 + U(-jitter, jitter)``
    and, in ``"smooth"`` phase mode, applies a random polynomial phase.
    With every knob at zero and ``phase_mode="none"`` each variant is the
    base phantom.
    """
    w = h if w is None else w
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= jitter <= 0.1:
        raise ValueError("intensity jitter is limited to 10%")
    if phase_mode not in PHASE_MODES:
        raise ValueError(f"phase_mode must be one of {PHASE_MODES}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        deg = rng.uniform(-max_rotation, max_rotation)
        scale = 1.0 - rng.uniform(0.0, scale_jitter)
        gains = 1.0 + rng.uniform(-jitter, jitter, size=len(base))
        coeffs = rng.normal(0.0, 0.5, size=6)
        table = [_rotate(e, deg, scale, g) for e, g in zip(base, gains)]
        img = ellipse_phantom(h, w, table).astype(np.complex128)
        if phase_mode == "smooth":
            img *= np.exp(1j * smooth_phase(h, w, coeffs))
        out.append(img)
    return out
