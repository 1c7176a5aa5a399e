import logging

import numpy as np
import pytest

from dured import autodiff as ad
from dured.core import ROWS_1D, ForwardModel, apply_adjoint, apply_forward, fft2c, ifft2c, vdot
from dured.denoisers import zw_forward
from dured.errors import DivergenceError, ShapeMismatchError
from dured.phantoms import phantom_variants, shepp_logan
from dured.sampling import SamplingPDF, draw_mask
from dured.unrolled import (
    DuredConfig,
    DuredParams,
    augment,
    dured_forward,
    dured_graph,
    make_training_sample,
    n2n_loss,
    simulate_pairs,
    train,
)

from conftest import random_image
from gradcheck import check

SMALL = DuredConfig(depth=3, hidden=4, epochs=1)


def plain_cg(A, rhs, beta, iters):
    """Textbook CG on (A^H A + beta I) x = rhs from x = 0."""
    op = lambda p: apply_adjoint(A, apply_forward(A, p)) + beta * p
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    for _ in range(iters):
        rr = vdot(r, r).real
        Ap = op(p)
        a = rr / vdot(p, Ap).real
        x = x + a * p
        r = r - a * Ap
        p = r + vdot(r, r).real / rr * p
    return x


def recursion_oracle(y, A, cfg, params):
    lam, beta = float(params.lam.value), float(params.beta.value)
    x = v = ifft2c(y)
    u = np.zeros_like(x)
    for n in range(cfg.n_modules):
        x = plain_cg(A, apply_adjoint(A, y) + beta * (v - u), beta, cfg.cg_iters)
        z = zw_forward(params.net_for(n), v)
        v = -(lam / beta) * z + (x + u)
        u = u + (x - v)
    return x


def instance(seed, n=8):
    rng = np.random.default_rng(seed)
    A = draw_mask(SamplingPDF(0.3, 1.0, n, n), seed).forward_model()
    return rng, A, apply_forward(A, random_image(rng, (n, n)))


class TestForward:
    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("shared", [True, False])
    def test_matches_recursion_oracle(self, seed, shared):
        rng, A, y = instance(seed)
        cfg = DuredConfig(n_modules=2, depth=3, hidden=4, shared_denoiser=shared)
        params = DuredParams.initialize(cfg, seed)
        params.lam.value = np.array(rng.uniform(0.5, 5))
        params.beta.value = np.array(rng.uniform(0.5, 5))
        for p in params.parameters()[2:]:
            p.value = p.value + 0.1 * rng.standard_normal(p.value.shape)
        out = dured_forward(y, A, cfg, params)
        ref = recursion_oracle(y, A, cfg, params)
        assert np.max(abs(out - ref)) <= 1e-10 * np.max(abs(ref))

    @pytest.mark.parametrize("n_modules", [1, 2, 4])
    def test_zero_weights_keep_dual_at_zero(self, n_modules):
        _, A, y = instance(5)
        cfg = DuredConfig(n_modules=n_modules, depth=2, hidden=3)
        params = DuredParams.initialize(cfg)
        params.zero_nets()
        _, states = dured_forward(y, A, cfg, params, return_states=True)
        assert len(states) == n_modules
        for s in states:
            assert not np.any(s.u) and not np.any(s.z)
            assert np.array_equal(s.v, s.x)

    def test_zero_weights_full_mask_returns_inverse_fft(self, rng):
        y = random_image(rng, (8, 8))
        cfg = DuredConfig(n_modules=1, depth=2, hidden=3)
        params = DuredParams.initialize(cfg)
        params.zero_nets()
        out = dured_forward(y, ForwardModel.full((8, 8)), cfg, params)
        assert np.max(abs(out - ifft2c(y))) < 1e-6

    def test_batch_matches_single(self):
        cfg = DuredConfig(depth=2, hidden=3)
        params = DuredParams.initialize(cfg, 1)
        items = [instance(s) for s in range(3)]
        y = np.stack([ad.to_channels(yy) for _, _, yy in items])
        w = np.stack([A.effective_weights for _, A, _ in items])[:, None]
        out = ad.to_complex(dured_graph(y, w, params, cfg).value)
        for i, (_, A, yy) in enumerate(items):
            np.testing.assert_allclose(out[i], dured_forward(yy, A, cfg, params), atol=1e-12)

    def test_nonpositive_beta_is_clamped_and_counted(self, caplog):
        _, A, y = instance(2)
        cfg = DuredConfig(depth=2, hidden=3)
        params = DuredParams.initialize(cfg)
        params.beta.value = np.array(-1.0)
        with caplog.at_level(logging.WARNING):
            out = dured_forward(y, A, cfg, params)
        assert np.all(np.isfinite(out))
        assert params.clamp_events == 1
        assert "clamping" in caplog.text

    def test_shape_mismatch(self):
        _, A, _ = instance(0)
        params = DuredParams.initialize(SMALL)
        with pytest.raises(ShapeMismatchError):
            dured_forward(np.zeros((8, 9)), A, SMALL, params)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DuredConfig(n_modules=0)
        with pytest.raises(ValueError):
            DuredConfig(lr=0)


class TestEndToEndGradient:
    def test_two_module_graph_matches_finite_differences(self):
        x_true = shepp_logan(8, phase_mode="smooth")
        pdf = SamplingPDF(0.3, 1.0, 8, 8)
        s = make_training_sample(x_true, pdf, 1, 2)
        cfg = DuredConfig(n_modules=2, depth=3, hidden=4, lambda_init=2.0, beta_init=3.0)
        params = DuredParams.initialize(cfg, 0)
        y = ad.to_channels(s.y1)[None]
        w = (s.input_draw.mask * s.input_draw.weights)[None, None]
        t = ad.Tensor(ad.to_channels(s.target_image)[None])
        loss = lambda: ad.sum_squares(dured_graph(y, w, params, cfg) - t) / 64.0
        assert check(loss, params.parameters(), h=1e-6) < 1e-3

    def test_default_network_sampled_entries(self):
        x_true = shepp_logan(8, phase_mode="smooth")
        s = make_training_sample(x_true, SamplingPDF(0.3, 1.0, 8, 8), 3, 4)
        cfg = DuredConfig()
        params = DuredParams.initialize(cfg, 1)
        y = ad.to_channels(s.y1)[None]
        w = (s.input_draw.mask * s.input_draw.weights)[None, None]
        t = ad.Tensor(ad.to_channels(s.target_image)[None])
        loss = lambda: ad.sum_squares(dured_graph(y, w, params, cfg) - t) / 64.0
        assert check(loss, params.parameters(), h=1e-6, sample=6) < 1e-3

    def test_every_layer_receives_gradient(self):
        x_true = shepp_logan(16, phase_mode="smooth")
        s = make_training_sample(x_true, SamplingPDF(0.3, 1.0, 16, 16), 1, 2)
        cfg = DuredConfig(depth=4, hidden=4)
        params = DuredParams.initialize(cfg, 0)
        y = ad.to_channels(s.y1)[None]
        w = (s.input_draw.mask * s.input_draw.weights)[None, None]
        t = ad.Tensor(ad.to_channels(s.target_image)[None])
        grads = ad.backward(ad.sum_squares(dured_graph(y, w, params, cfg) - t), params.parameters())
        assert grads[params.lam] != 0 and grads[params.beta] != 0
        for weight in params.nets[0].weights:
            assert np.any(grads[weight] != 0)


class TestLoss:
    def test_identical(self, rng):
        x = random_image(rng, (5, 5))
        assert n2n_loss(x, x) == 0

    def test_constant_offset(self, rng):
        x = random_image(rng, (6, 4))
        c = 0.3 - 0.4j
        assert n2n_loss(x + c, x) == pytest.approx(abs(c) ** 2, rel=1e-12)

    def test_matches_loop(self, rng):
        a, b = random_image(rng, (5, 7)), random_image(rng, (5, 7))
        total = 0.0
        for i in range(5):
            for j in range(7):
                total += (a[i, j].real - b[i, j].real) ** 2 + (a[i, j].imag - b[i, j].imag) ** 2
        assert n2n_loss(a, b) == pytest.approx(total / 35, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            n2n_loss(np.zeros((3, 3)), np.zeros((3, 4)))


class TestAugment:
    @pytest.fixture
    def sample(self):
        return make_training_sample(shepp_logan(16, phase_mode="smooth"), SamplingPDF(0.3, 1.0, 16, 16), 5, 6)

    def test_zero_shift(self, sample):
        assert augment(sample, 0, 0) is sample

    def test_training_sample_invariants(self, sample):
        assert sample.input_draw.pdf == sample.target_draw.pdf
        assert not np.array_equal(sample.input_draw.mask, sample.target_draw.mask)
        np.testing.assert_array_equal(sample.target_image, ifft2c(sample.y2))

    def test_zero_filled_commutes_with_shift(self, sample):
        moved = augment(sample, 3, -5)
        np.testing.assert_allclose(ifft2c(moved.y1), np.roll(ifft2c(sample.y1), (-5, 3), axis=(0, 1)), atol=1e-10)
        np.testing.assert_allclose(moved.target_image, np.roll(sample.target_image, (-5, 3), axis=(0, 1)), atol=1e-10)

    def test_loss_is_shift_invariant(self, sample):
        moved = augment(sample, 4, 7)
        before = n2n_loss(ifft2c(sample.y1), sample.target_image)
        after = n2n_loss(ifft2c(moved.y1), moved.target_image)
        assert after == pytest.approx(before, abs=1e-10)

    def test_masks_unchanged(self, sample):
        moved = augment(sample, 2, 2)
        assert moved.input_draw is sample.input_draw and moved.target_draw is sample.target_draw

    def test_simulate_pairs_seeds(self):
        imgs = phantom_variants(3, 0, 16)
        a = simulate_pairs(imgs, SamplingPDF(0.3, 1.0, 16, 16), 9)
        b = simulate_pairs(imgs, SamplingPDF(0.3, 1.0, 16, 16), 9)
        assert [s.input_draw.seed for s in a] == [s.input_draw.seed for s in b]
        assert all(s.input_draw.seed != s.target_draw.seed for s in a)


@pytest.fixture(scope="module")
def dataset():
    pdf = SamplingPDF(0.2, 1.0, 8, 8, ROWS_1D)
    return simulate_pairs(phantom_variants(4, 1, 8), pdf, 2)


class TestTrain:
    def test_zero_epochs(self, dataset):
        cfg = DuredConfig(depth=2, hidden=3, epochs=0)
        init = DuredParams.initialize(cfg, 3)
        result = train(dataset, cfg, 3)
        assert result.epoch_losses == []
        for a, b in zip(result.params.parameters(), init.parameters()):
            assert a.value.tobytes() == b.value.tobytes()

    def test_single_sample_loss_drops(self):
        x = shepp_logan(8, phase_mode="smooth")
        pdf = SamplingPDF(0.22, 1.0, 8, 8)
        sample = make_training_sample(x, pdf, 10, 11)
        cfg = DuredConfig(depth=2, hidden=4, epochs=200, augment=False)
        result = train([sample], cfg, 0)
        assert len(result.epoch_losses) == 200
        assert result.epoch_losses[-1] < result.epoch_losses[0]

    def test_deterministic(self, dataset):
        cfg = DuredConfig(depth=2, hidden=3, epochs=3, batch_size=3)
        a, b = train(dataset, cfg, 7), train(dataset, cfg, 7)
        assert a.epoch_losses == b.epoch_losses
        for p, q in zip(a.params.parameters(), b.params.parameters()):
            assert p.value.tobytes() == q.value.tobytes()

    def test_updates_all_parameters(self, dataset):
        cfg = DuredConfig(depth=2, hidden=3, epochs=2)
        init = DuredParams.initialize(cfg, 0)
        result = train(dataset, cfg, 0)
        for p, q in zip(result.params.parameters(), init.parameters()):
            assert not np.array_equal(p.value, q.value)
            assert np.all(np.isfinite(p.value))
        assert result.params.lam.step_count == 2 * 1

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_returns_checkpoint(self, dataset):
        cfg = DuredConfig(depth=2, hidden=3, epochs=2, lambda_init=1e308, beta_init=1e-300)
        with pytest.raises(DivergenceError) as info:
            train(dataset, cfg, 0)
        ckpt = info.value.checkpoint
        assert ckpt is not None and float(ckpt.lam.value) == 1e308

    def test_clamp_events_reported(self, dataset):
        cfg = DuredConfig(depth=2, hidden=3, epochs=1, beta_init=-1.0)
        result = train(dataset, cfg, 0)
        assert result.clamp_events >= 1

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train([], SMALL, 0)
