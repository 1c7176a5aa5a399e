import numpy as np
import pytest

from dured.core import ForwardModel, apply_adjoint, apply_forward, cg_solve_x, ifft2c
from dured.denoisers import DenoiserSpec, denoise
from dured.errors import DivergenceError
from dured.phantoms import shepp_logan
from dured.red import admm_red, red_cost, red_gradient
from dured.sampling import SamplingPDF, draw_mask
from dured.unrolled import DuredConfig, DuredParams, dured_forward

from conftest import dense_matrix, random_image

BLUR = DenoiserSpec("gaussian-blur", sigma=1.0)
IDENTITY = DenoiserSpec("identity")


def problem(seed=0, n=8):
    A = draw_mask(SamplingPDF(0.3, 1.0, n, n), seed).forward_model()
    x = shepp_logan(n, phase_mode="smooth")
    return A, apply_forward(A, x)


def dense_minimizer(A, y, f, lam):
    shape = A.shape
    M = dense_matrix(lambda e: apply_forward(A, e), shape)
    G = dense_matrix(lambda e: denoise(f, e), shape)
    H = M.conj().T @ M + lam * (np.eye(M.shape[1]) - G)
    return np.linalg.solve(H, M.conj().T @ y.ravel()).reshape(shape)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestAdmmRed:
    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("v_update", ["gradient", "exact"])
    def test_converges_to_dense_minimizer(self, seed, v_update):
        A, y = problem(seed)
        res = admm_red(y, A, BLUR, 0.5, 2.0, 200, 15, v_update)
        assert res.iterations <= 200
        assert rel(res.x, dense_minimizer(A, y, BLUR, 0.5)) < 1e-3

    @pytest.mark.parametrize("sigma", [0.7, 1.5])
    def test_other_symmetric_blurs(self, sigma):
        A, y = problem(4)
        f = DenoiserSpec("gaussian-blur", sigma=sigma, truncate=2.0)
        res = admm_red(y, A, f, 0.3, 1.0, 200)
        assert rel(res.x, dense_minimizer(A, y, f, 0.3)) < 1e-3

    def test_identity_denoiser_equals_zero_weight_network(self):
        A, y = problem(1)
        cfg = DuredConfig(n_modules=3, cg_iters=15, depth=2, hidden=3, lambda_init=0.8, beta_init=1.5)
        params = DuredParams.initialize(cfg)
        params.zero_nets()
        net_out = dured_forward(y, A, cfg, params)
        red_out = admm_red(y, A, IDENTITY, 0.8, 1.5, n_iters=3, cg_iters=15).x
        assert np.max(abs(net_out - red_out)) <= 1e-10 * np.max(abs(red_out))

    def test_no_regularization_full_mask(self, rng):
        y = random_image(rng, (8, 8))
        res = admm_red(y, ForwardModel.full((8, 8)), BLUR, 0.0, 1.0, 50)
        assert np.max(abs(res.x - ifft2c(y))) < 1e-6

    def test_no_regularization_matches_cg_fixed_point(self):
        A, y = problem(2)
        res = admm_red(y, A, BLUR, 0.0, 1.0, 20, 30)
        # with lam = 0, v = x + u and u stays 0, so x repeats the CG solve started from ifft2c(y)
        np.testing.assert_allclose(res.u, 0, atol=1e-12)
        x = ifft2c(y)
        for _ in range(20):
            x = cg_solve_x(A, y, 1.0, x, 30)
        assert rel(res.x, x) < 1e-6

    def test_fixed_point_optimality_conditions(self):
        A, y = problem(0)
        lam, beta = 0.5, 2.0
        res = admm_red(y, A, BLUR, lam, beta, 500, 40, tol=1e-8)
        x, v, u = res.x, res.v, res.u
        assert res.residuals[-1] < 1e-8
        # x-subproblem, v-subproblem (gradient rule), dual feasibility
        x_cond = apply_adjoint(A, apply_forward(A, x) - y) + beta * (x - v + u)
        v_cond = lam * (v - denoise(BLUR, v)) - beta * u
        assert np.linalg.norm(x_cond) < 1e-6
        assert np.linalg.norm(v_cond) < 1e-6
        assert np.linalg.norm(x - v) < 1e-6

    def test_primal_residual_eventually_decreases(self):
        A, y = problem(3)
        r = admm_red(y, A, BLUR, 0.5, 2.0, 60).residuals
        tail = r[10:]
        increases = sum(b > a for a, b in zip(tail, tail[1:]))
        assert r[-1] < r[10]
        assert increases <= len(tail) // 4

    def test_early_stop(self):
        A, y = problem(0)
        res = admm_red(y, A, BLUR, 0.5, 2.0, 500, tol=1e-5)
        assert res.iterations < 500 and res.residuals[-1] < 1e-5

    def test_divergence_reports_history(self):
        A, y = problem(0)
        with pytest.raises(DivergenceError) as info:
            admm_red(y, A, BLUR, 0.5, 0.1, 500)
        assert info.value.history and info.value.history[-1] > 1e6

    def test_argument_validation(self):
        A, y = problem(0)
        with pytest.raises(ValueError):
            admm_red(y, A, BLUR, 0.5, 0.0)
        with pytest.raises(ValueError):
            admm_red(y, A, BLUR, 0.5, 1.0, v_update="prox")


class TestCostAndGradient:
    def test_consistent_point_identity_denoiser(self):
        A, _ = problem(0)
        x = shepp_logan(8, phase_mode="smooth")
        assert red_cost(x, apply_forward(A, x), A, IDENTITY, 3.0) == 0

    def test_no_regularization_is_data_term(self, rng):
        A, y = problem(0)
        x = random_image(rng, (8, 8))
        r = apply_forward(A, x) - y
        assert red_cost(x, y, A, BLUR, 0.0) == pytest.approx(0.5 * np.sum(abs(r) ** 2), rel=1e-12)

    def test_matches_dense_quadratic(self, rng):
        A, y = problem(1)
        x = random_image(rng, (8, 8))
        M = dense_matrix(lambda e: apply_forward(A, e), (8, 8))
        G = dense_matrix(lambda e: denoise(BLUR, e), (8, 8))
        v = x.ravel()
        oracle = 0.5 * np.sum(abs(M @ v - y.ravel()) ** 2) + 0.35 * np.real(v.conj() @ (v - G @ v))
        assert red_cost(x, y, A, BLUR, 0.7) == pytest.approx(oracle, rel=1e-8)

    def test_gradient_vanishes_at_minimizer(self):
        A, y = problem(2)
        x_star = dense_minimizer(A, y, BLUR, 0.5)
        assert np.linalg.norm(red_gradient(x_star, y, A, BLUR, 0.5)) < 1e-6

    def test_gradient_full_mask_no_regularization(self, rng):
        y, x = random_image(rng, (8, 8)), random_image(rng, (8, 8))
        g = red_gradient(x, y, ForwardModel.full((8, 8)), BLUR, 0.0)
        np.testing.assert_allclose(g, x - ifft2c(y), atol=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        A, y = problem(0)
        x = random_image(rng, (8, 8))
        g = red_gradient(x, y, A, BLUR, 0.8)
        h = 1e-5
        fd = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            for unit in (1, 1j):
                e = np.zeros_like(x)
                e[idx] = unit * h
                fd[idx] += unit * (red_cost(x + e, y, A, BLUR, 0.8) - red_cost(x - e, y, A, BLUR, 0.8)) / (2 * h)
        assert np.linalg.norm(fd - g) <= 1e-5 * np.linalg.norm(g)
