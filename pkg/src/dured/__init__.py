"""Unrolled ADMM reconstruction with a learned RED denoiser for undersampled MRI."""

from .core import FULL_2D, ROWS_1D, ForwardModel, apply_adjoint, apply_forward, cg_solve_x, fft2c, ifft2c
from .denoisers import DenoiserSpec, ResidualConvNet, denoise
from .evaluation import contour_grid, degradation_curve, nmse, sampling_pattern_study, worst_case_perturb
from .phantoms import phantom_variants, shepp_logan
from .red import admm_red, red_cost
from .sampling import SamplingPDF, draw_mask, mu_for_acceleration, zero_filled
from .unrolled import DuredConfig, DuredParams, dured_forward, n2n_loss, simulate_pairs, train

__version__ = "0.1.0"
