"""Classic ADMM solver for the RED objective with a fixed plug-in denoiser.

Minimizes ``1/2 ||A x - y||^2 + lam/2 Re<x, x - f(x)>`` by alternating a
conjugate-gradient data-consistency solve, a denoiser-driven update of
the split variable and a scaled dual ascent step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ForwardModel, _check_same_shape, apply_adjoint, apply_forward, as_image, cg_solve_x, ifft2c, vdot
from .denoisers import DenoiserSpec, denoise
from .errors import DivergenceError

__all__ = ["RedResult", "admm_red", "red_cost", "red_gradient"]

V_UPDATES = ("gradient", "exact")


@dataclass
class RedResult:
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    residuals: list
    """Primal residual ``||x^n - v^n||`` after every iteration."""

    @property
    def iterations(self) -> int:
        return len(self.residuals)


def admm_red(
    y,
    A: ForwardModel,
    f: DenoiserSpec,
    lam: float,
    beta: float,
    n_iters: int = 50,
    cg_iters: int = 15,
    v_update: str = "gradient",
    tol: float = 0.0,
    divergence_threshold: float = 1e6,
) -> RedResult:
    """ADMM-RED reconstruction from measured k-space ``y``.

    ``v_update="gradient"`` sets ``v = x + u - (lam/beta) (v_prev - f(v_prev))``,
    the same rule the unrolled network uses; ``"exact"`` solves the
    linearized v-subproblem, ``v = (lam f(v_prev) + beta (x + u)) / (lam + beta)``.
    Both share the RED minimizer as fixed point.

    Iteration starts from ``x = v = ifft2c(y)``, ``u = 0`` and stops after
    ``n_iters`` or once the primal residual falls below ``tol``.
    """
    if lam < 0 or beta <= 0:
        raise ValueError("lam must be >= 0 and beta > 0")
    if n_iters < 1 or cg_iters < 1:
        raise ValueError("n_iters and cg_iters must be >= 1")
    if v_update not in V_UPDATES:
        raise ValueError(f"v_update must be one of {V_UPDATES}")
    y = as_image(y, "measurement")
    _check_same_shape(y, A.mask, "measurement and mask")

    x = v = ifft2c(y)
    u = np.zeros_like(x)
    residuals = []
    for _ in range(n_iters):
        x = cg_solve_x(A, y, beta, v - u, cg_iters)
        fv = denoise(f, v)
        if v_update == "gradient":
            v = -(lam / beta) * (v - fv) + (x + u)
        else:
            v = (lam * fv + beta * (x + u)) / (lam + beta)
        u = u + (x - v)
        res = float(np.linalg.norm(x - v))
        residuals.append(res)
        if not np.isfinite(res) or res > divergence_threshold:
            raise DivergenceError(f"primal residual reached {res:.3g}", history=residuals)
        if res < tol:
            break
    return RedResult(x, v, u, residuals)


def red_cost(x, y, A: ForwardModel, f: DenoiserSpec, lam: float) -> float:
    """``1/2 ||A x - y||^2 + lam/2 Re<x, x - f(x)>``."""
    x = as_image(x)
    y = as_image(y, "measurement")
    _check_same_shape(x, y, "image and measurement")
    r = apply_forward(A, x) - y
    reg = vdot(x, x - denoise(f, x)).real if lam else 0.0
    return float(0.5 * vdot(r, r).real + 0.5 * lam * reg)


def red_gradient(x, y, A: ForwardModel, f: DenoiserSpec, lam: float) -> np.ndarray:
    """``A^H (A x - y) + lam (x - f(x))``; exact for symmetric linear ``f``."""
    x = as_image(x)
    y = as_image(y, "measurement")
    _check_same_shape(x, y, "image and measurement")
    g = apply_adjoint(A, apply_forward(A, x) - y)
    if lam:
        g = g + lam * (x - denoise(f, x))
    return g
