"""Fourier-domain measurement model and the data-consistency solver.

Images are plain 2D ``complex128`` numpy arrays. k-space is *centered*:
the DC sample sits at index ``(H // 2, W // 2)`` for both even and odd
grid sizes, and the transform is orthonormal, so ``ifft2c`` is both the
inverse and the adjoint of ``fft2c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError, ShapeMismatchError, SingularSystemError

__all__ = [
    "as_image",
    "fft2c",
    "ifft2c",
    "ForwardModel",
    "apply_forward",
    "apply_adjoint",
    "normal_operator",
    "cg_solve_x",
    "phase_shift_translate",
    "kspace_coords",
    "vdot",
]

FULL_2D = "full-2D"
ROWS_1D = "rows-only-1D"
DIM_MODES = (FULL_2D, ROWS_1D)


def as_image(arr, name="image") -> np.ndarray:
    """Validate ``arr`` as a finite 2D grid and return it as ``complex128``."""
    out = np.asarray(arr)
    if out.ndim != 2 or out.shape[0] < 1 or out.shape[1] < 1:
        raise DataValidationError(f"{name} must be a non-empty 2D grid, got shape {out.shape}")
    out = out.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(out)):
        raise DataValidationError(f"{name} contains NaN or Inf")
    return out


def _check_same_shape(a, b, what="operands"):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} have mismatched shapes {a.shape} and {b.shape}")


def fft2c(img) -> np.ndarray:
    """Orthonormal 2D DFT with DC moved to the grid center."""
    x = as_image(img)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x), norm="ortho"))


def ifft2c(ksp) -> np.ndarray:
    """Exact inverse (and adjoint) of :func:`fft2c`."""
    k = as_image(ksp, "k-space")
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k), norm="ortho"))


def vdot(a, b) -> complex:
    """Complex inner product ``<a, b> = sum(conj(a) * b)``."""
    return np.vdot(np.asarray(a).ravel(), np.asarray(b).ravel())


def kspace_coords(height: int, width: int):
    """Integer frequency indices ``(ky, kx)`` relative to the centered DC.

    Returned as broadcastable column/row vectors.
    """
    ky = np.arange(height) - height // 2
    kx = np.arange(width) - width // 2
    return ky[:, None], kx[None, :]


@dataclass(frozen=True)
class ForwardModel:
    """Undersampled, density-compensated Fourier operator ``A``.

    ``A x = mask * weights * fft2c(x)``; acquired samples are pre-weighted
    by ``1/p(k)``. Weights at unacquired locations are ignored.
    """

    mask: np.ndarray
    weights: np.ndarray
    dim_mode: str = FULL_2D

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        weights = np.asarray(self.weights, dtype=np.float64)
        if mask.ndim != 2:
            raise DataValidationError("mask must be 2D")
        _check_same_shape(mask, weights, "mask and weights")
        if self.dim_mode not in DIM_MODES:
            raise DataValidationError(f"unknown dim_mode {self.dim_mode!r}")
        if not mask[mask.shape[0] // 2, mask.shape[1] // 2]:
            raise DataValidationError("DC location must be sampled")
        if not np.all(np.isfinite(weights[mask])) or np.any(weights[mask] <= 0):
            raise DataValidationError("weights must be finite and positive where mask is true")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def full(cls, shape, dim_mode=FULL_2D) -> "ForwardModel":
        """Fully sampled, unit-weight model (``A`` is then just ``fft2c``)."""
        return cls(np.ones(shape, dtype=bool), np.ones(shape), dim_mode)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def is_full(self) -> bool:
        return bool(self.mask.all())

    @property
    def effective_weights(self) -> np.ndarray:
        """``mask * weights`` as a real grid (zero where not acquired)."""
        return np.where(self.mask, self.weights, 0.0)


def apply_forward(A: ForwardModel, x) -> np.ndarray:
    """``y = A x``: weighted, masked k-space of ``x``."""
    x = as_image(x)
    _check_same_shape(x, A.mask, "image and mask")
    return A.effective_weights * fft2c(x)


def apply_adjoint(A: ForwardModel, y) -> np.ndarray:
    """``A^H y``: mask and weight, then inverse transform."""
    y = as_image(y, "measurement")
    _check_same_shape(y, A.mask, "measurement and mask")
    return ifft2c(A.effective_weights * y)


def normal_operator(A: ForwardModel, x, beta: float) -> np.ndarray:
    """``(A^H A + beta I) x``."""
    return ifft2c(A.effective_weights**2 * fft2c(x)) + beta * x


def cg_solve_x(
    A: ForwardModel,
    y,
    beta: float,
    x_reg,
    iters: int = 15,
    tol: float = 0.0,
    return_history: bool = False,
):
    """Solve ``(A^H A + beta I) x = A^H y + beta x_reg`` by conjugate gradients.

    Starts from zero. Stops after ``iters`` steps, or earlier once the
    relative residual ``||r|| / ||rhs||`` drops below ``tol``.

    Parameters
    ----------
    A : ForwardModel
    y : array_like
        Measured (weighted, masked) k-space.
    beta : float
        Penalty weight. Zero is only allowed with a fully sampled mask.
    x_reg : array_like
        Image the solution is pulled towards, ``v - u`` in the ADMM setting.
    iters : int
    tol : float
    return_history : bool
        Also return the list of residual norms, starting with ``||rhs||``.

    Returns
    -------
    x : ndarray
    history : list of float, only if ``return_history``
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if beta == 0 and not A.is_full:
        raise SingularSystemError("beta = 0 with an undersampled mask gives a singular system")
    y = as_image(y, "measurement")
    x_reg = as_image(x_reg, "x_reg")
    _check_same_shape(y, x_reg, "measurement and x_reg")

    rhs = apply_adjoint(A, y) + beta * x_reg
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = vdot(r, r).real
    b_norm = np.sqrt(rr)
    history = [float(b_norm)]
    if b_norm == 0.0:
        return (x, history) if return_history else x

    for _ in range(iters):
        Ap = normal_operator(A, p, beta)
        pAp = vdot(p, Ap).real
        if pAp <= 0.0:
            break
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = vdot(r, r).real
        history.append(float(np.sqrt(rr_new)))
        if rr_new == 0.0 or np.sqrt(rr_new) < tol * b_norm:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return (x, history) if return_history else x


def phase_shift_translate(ksp, dx: int, dy: int) -> np.ndarray:
    """Multiply centered k-space by the linear phase of a circular image shift.

    ``ifft2c(phase_shift_translate(fft2c(x), dx, dy))`` equals
    ``np.roll(x, (dy, dx), axis=(0, 1))``; ``dx`` moves columns, ``dy`` rows.
    """
    k = as_image(ksp, "k-space")
    h, w = k.shape
    dx, dy = int(dx) % w, int(dy) % h
    ky, kx = kspace_coords(h, w)
    # reduce exponents mod 1 so large shifts stay exact
    phase = np.exp(-2j * np.pi * (((ky * dy) % h) / h + ((kx * dx) % w) / w))
    return k * phase
