"""Error metrics, cost-landscape scans and robustness probes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .core import _check_same_shape, apply_forward, as_image, vdot
from .errors import DataValidationError
from .sampling import SamplingPDF, draw_mask
from .unrolled import DuredConfig, dured_forward, make_training_sample, train

__all__ = [
    "nmse",
    "ContourGrid",
    "contour_grid",
    "text_perturbation",
    "PerturbationResult",
    "worst_case_perturb",
    "degradation_curve",
    "sampling_pattern_study",
]

logger = logging.getLogger(__name__)


def nmse(gt, recon) -> float:
    """``||gt - recon||^2 / ||gt||^2``."""
    gt, recon = as_image(gt, "ground truth"), as_image(recon, "reconstruction")
    _check_same_shape(gt, recon, "ground truth and reconstruction")
    denom = vdot(gt, gt).real
    if denom == 0:
        raise DataValidationError("nMSE is undefined for an all-zero ground truth")
    d = gt - recon
    return float(vdot(d, d).real / denom)


@dataclass
class ContourGrid:
    """Cost and projected gradient sampled on ``x_hat + a e1 + b e2``.

    ``values[i, j]`` is the cost at ``a = offsets[i]``, ``b = offsets[j]``;
    missing (non-finite) evaluations are NaN.
    """

    offsets: np.ndarray
    values: np.ndarray
    grad_a: np.ndarray | None
    grad_b: np.ndarray | None
    directions: tuple

    @property
    def center(self) -> float:
        c = len(self.offsets) // 2
        return float(self.values[c, c])

    def boundary_inward_fraction(self) -> float:
        """Share of boundary points whose descent direction points toward the origin."""
        if self.grad_a is None:
            raise ValueError("grid was built without a gradient")
        n = len(self.offsets)
        A, B = np.meshgrid(self.offsets, self.offsets, indexing="ij")
        edge = np.zeros((n, n), dtype=bool)
        edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
        # -grad . (-position) > 0  <=>  grad . position > 0
        dots = self.grad_a * A + self.grad_b * B
        return float(np.mean(dots[edge] > 0))


def contour_grid(x_hat, cost, seed: int, grid_extent: float = 0.1, grid_n: int = 21, gradient=None) -> ContourGrid:
    """Scan ``cost`` over a random 2D slice through ``x_hat``.

    Two complex Gaussian direction images are drawn from ``seed`` and
    scaled to unit L2 norm. ``gradient`` (image -> image), if given, is
    projected onto both directions at every lattice point.
    """
    if grid_n < 3 or grid_n % 2 == 0:
        raise ValueError("grid_n must be an odd integer >= 3")
    x_hat = as_image(x_hat)
    rng = np.random.default_rng(seed)
    dirs = []
    for _ in range(2):
        e = rng.standard_normal(x_hat.shape) + 1j * rng.standard_normal(x_hat.shape)
        dirs.append(e / np.linalg.norm(e))
    e1, e2 = dirs
    offsets = np.linspace(-grid_extent, grid_extent, grid_n)
    offsets[grid_n // 2] = 0.0
    values = np.full((grid_n, grid_n), np.nan)
    ga = gb = None
    if gradient is not None:
        ga, gb = np.full((grid_n, grid_n), np.nan), np.full((grid_n, grid_n), np.nan)
    for i, a in enumerate(offsets):
        for j, b in enumerate(offsets):
            pt = x_hat + a * e1 + b * e2
            try:
                c = float(cost(pt))
            except (FloatingPointError, OverflowError, ValueError) as exc:
                logger.debug("cost failed at (%g, %g): %s", a, b, exc)
                continue
            if np.isfinite(c):
                values[i, j] = c
            if gradient is not None:
                g = gradient(pt)
                ga[i, j] = vdot(e1, g).real
                gb[i, j] = vdot(e2, g).real
    return ContourGrid(offsets, values, ga, gb, (e1, e2))


def text_perturbation(img, stencil, amplitude: float) -> np.ndarray:
    """Add ``amplitude`` to the real part wherever ``stencil`` is set."""
    img = as_image(img)
    stencil = np.asarray(stencil, dtype=bool)
    _check_same_shape(img, stencil, "image and stencil")
    return img + amplitude * stencil


@dataclass
class PerturbationResult:
    budget: float
    r: np.ndarray
    degradation: float
    baseline: float


def _l1(r):
    return float(np.sum(np.abs(r)))


def _scale_to_budget(d, budget):
    if budget == 0:
        return np.zeros_like(d)
    r = d * (budget / _l1(d))
    while _l1(r) > budget:
        r = r * (1.0 - 2.0**-50)
    return r


def _candidate_directions(shape, trials, seed):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(shape) + 1j * rng.standard_normal(shape) for _ in range(trials)]


def worst_case_perturb(recon, x, budget: float, trials: int = 16, seed: int = 0, carry=None) -> PerturbationResult:
    """Random-search surrogate for the worst perturbation of L1 size <= ``budget``.

    ``recon`` maps an input image to its reconstruction (typically it
    simulates the acquisition first). Each of ``trials`` seeded random
    directions is scaled to L1 norm ``budget``; the one maximizing
    ``nmse(x, recon(x + r))`` wins. ``carry`` adds extra already-feasible
    candidates, which is how nested budgets stay monotone.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x = as_image(x)
    baseline = nmse(x, recon(x))
    if budget == 0:
        return PerturbationResult(0.0, np.zeros_like(x), baseline, baseline)
    cands = [_scale_to_budget(d, budget) for d in _candidate_directions(x.shape, trials, seed)]
    for r in carry or ():
        if _l1(r) <= budget:
            cands.append(r)
    best_r, best = None, -np.inf
    for r in cands:
        err = nmse(x, recon(x + r))
        if err > best:
            best_r, best = r, err
    return PerturbationResult(float(budget), best_r, best, baseline)


def degradation_curve(recon, x, budgets, trials: int = 16, seed: int = 0) -> list:
    """Worst-case error for increasing budgets sharing one candidate pool.

    The winner for each budget is carried into the next one, so the
    returned degradations are nondecreasing.
    """
    budgets = [float(b) for b in budgets]
    if any(b2 < b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be sorted ascending")
    out, carry = [], []
    for b in budgets:
        res = worst_case_perturb(recon, x, b, trials, seed, carry=carry)
        out.append(res)
        carry = [res.r]
    return out


def sampling_pattern_study(
    n_patterns_list,
    cfg: DuredConfig,
    train_images,
    test_images,
    pdf: SamplingPDF,
    seed: int = 0,
) -> list:
    """Train once per pattern count and report held-out nMSE.

    For a pool of ``n`` mask seeds, training image ``i`` is acquired with
    pool entries ``2i mod n`` (input) and ``2i + 1 mod n`` (target). Test
    images always use fresh seeds outside every pool.

    Returns one dict per requested count with keys ``n_patterns``,
    ``nmse_mean``, ``nmse_std``, ``zero_filled_nmse`` and ``per_image``.
    """
    train_images, test_images = list(train_images), list(test_images)
    if not train_images or not test_images:
        raise ValueError("need at least one training and one test image")
    test_seeds = [seed * 1_000_003 + 900_000 + j for j in range(len(test_images))]
    tests = []
    for x, s in zip(test_images, test_seeds):
        A = draw_mask(pdf, s).forward_model()
        tests.append((x, A, apply_forward(A, x)))
    rows = []
    for n in n_patterns_list:
        if n < 1:
            raise ValueError("n_patterns must be >= 1")
        pool = [seed * 1_000_003 + k for k in range(n)]
        dataset = [
            make_training_sample(x, pdf, pool[(2 * i) % n], pool[(2 * i + 1) % n]) for i, x in enumerate(train_images)
        ]
        result = train(dataset, cfg, seed)
        errs = [nmse(x, dured_forward(y, A, cfg, result.params)) for x, A, y in tests]
        zf = [nmse(x, np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(y), norm="ortho"))) for x, _, y in tests]
        rows.append(
            {
                "n_patterns": int(n),
                "nmse_mean": float(np.mean(errs)),
                "nmse_std": float(np.std(errs)),
                "zero_filled_nmse": float(np.mean(zf)),
                "per_image": errs,
            }
        )
        logger.info("n_patterns=%d test nMSE %.4g", n, rows[-1]["nmse_mean"])
    return rows
