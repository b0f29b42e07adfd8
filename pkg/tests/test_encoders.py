"""Encoder forward fixtures, dimension arithmetic, and gradient integrity."""

import numpy as np
import pytest

from neuralign import tensor as T
from neuralign.encoders import (
    eegproject_backward,
    eegproject_forward,
    init_params,
    tsconv_backward,
    tsconv_flat_features,
    tsconv_forward,
)
from neuralign.rng import Rng

from gradcheck import assert_grad_close, numeric_grad

GRAD_TOL_64 = 1e-5


def eeg_params_64(c=4, t=8, d=16, seed=0, dropout_p=0.0):
    return init_params("eegproject", c, t, d, Rng(seed), dropout_p=dropout_p,
                       dtype=np.float64)


def ts_params_64(c=2, t=80, d=8, seed=0, dropout_p=0.0):
    return init_params("tsconv", c, t, d, Rng(seed), dropout_p=dropout_p,
                       dtype=np.float64)


class TestEEGProjectForward:
    def test_zero_residual_branch(self):
        p = eeg_params_64()
        p.W1[...] = 0.0
        p.b1[...] = 0.0
        x = Rng(1).normal((3, 4, 8), dtype=np.float64)
        z, _ = eegproject_forward(p, x, mode="eval")
        h = x.reshape(3, -1) @ p.W0 + p.b0
        expected, _ = T.layer_norm(h, p.gamma, p.beta)
        np.testing.assert_allclose(z, expected, atol=1e-12)

    def test_eval_mode_deterministic(self):
        p = eeg_params_64(dropout_p=0.3)
        x = Rng(2).normal((5, 4, 8), dtype=np.float64)
        z1, _ = eegproject_forward(p, x, mode="eval")
        z2, _ = eegproject_forward(p, x, mode="eval")
        np.testing.assert_array_equal(z1, z2)

    def test_train_with_p0_equals_eval(self):
        p = eeg_params_64(dropout_p=0.0)
        x = Rng(3).normal((5, 4, 8), dtype=np.float64)
        z_train, _ = eegproject_forward(p, x, mode="train", rng=Rng(0))
        z_eval, _ = eegproject_forward(p, x, mode="eval")
        np.testing.assert_array_equal(z_train, z_eval)

    def test_train_mode_requires_rng(self):
        p = eeg_params_64()
        with pytest.raises(ValueError, match="requires an Rng"):
            eegproject_forward(p, np.zeros((1, 4, 8)), mode="train")

    def test_shape_mismatch(self):
        p = eeg_params_64()
        with pytest.raises(ValueError, match="features"):
            eegproject_forward(p, np.zeros((2, 3, 3)), mode="eval")


class TestEEGProjectBackward:
    def test_zero_gradient_propagates_zeros(self):
        p = eeg_params_64()
        x = Rng(4).normal((3, 4, 8), dtype=np.float64)
        z, cache = eegproject_forward(p, x, mode="eval")
        grads, gx = eegproject_backward(p, cache, np.zeros_like(z))
        assert all(np.all(g == 0) for g in grads.values())
        assert np.all(gx == 0)

    def test_linearity_in_upstream_gradient(self):
        p = eeg_params_64()
        x = Rng(5).normal((3, 4, 8), dtype=np.float64)
        _, cache = eegproject_forward(p, x, mode="eval")
        g = Rng(6).normal((3, 16), dtype=np.float64)
        grads1, gx1 = eegproject_backward(p, cache, g)
        grads2, gx2 = eegproject_backward(p, cache, 2.0 * g)
        for k in grads1:
            np.testing.assert_allclose(grads2[k], 2.0 * grads1[k], rtol=1e-12)
        np.testing.assert_allclose(gx2, 2.0 * gx1, rtol=1e-12)

    def test_stale_cache_detected(self):
        p = eeg_params_64()
        x = Rng(7).normal((3, 4, 8), dtype=np.float64)
        _, cache = eegproject_forward(p, x, mode="eval")
        with pytest.raises(ValueError, match="stale cache"):
            eegproject_backward(p, cache, np.zeros((5, 16)))

    def test_gradients_match_finite_differences(self):
        p = eeg_params_64(c=4, t=8, d=16)
        x = Rng(8).normal((4, 4, 8), dtype=np.float64)
        g = Rng(9).normal((4, 16), dtype=np.float64)

        def loss():
            z, _ = eegproject_forward(p, x, mode="eval")
            return float((z * g).sum())

        _, cache = eegproject_forward(p, x, mode="eval")
        grads, gx = eegproject_backward(p, cache, g)
        for name, arr in p.param_dict().items():
            assert_grad_close(grads[name], numeric_grad(loss, arr),
                              GRAD_TOL_64, f"eegproject {name}")
        assert_grad_close(gx, numeric_grad(loss, x), GRAD_TOL_64, "eegproject input")

    def test_gradient_through_dropout_mask(self):
        # fixed mask: compare backward against finite differences of the
        # same masked forward (mask replayed from an identical rng stream)
        p = eeg_params_64(dropout_p=0.4)
        x = Rng(10).normal((3, 4, 8), dtype=np.float64)
        g = Rng(11).normal((3, 16), dtype=np.float64)

        def loss():
            z, _ = eegproject_forward(p, x, mode="train", rng=Rng(77))
            return float((z * g).sum())

        _, cache = eegproject_forward(p, x, mode="train", rng=Rng(77))
        grads, gx = eegproject_backward(p, cache, g)
        for name, arr in p.param_dict().items():
            assert_grad_close(grads[name], numeric_grad(loss, arr),
                              GRAD_TOL_64, f"eegproject+dropout {name}")
        assert_grad_close(gx, numeric_grad(loss, x), GRAD_TOL_64, "eegproject+dropout input")


class TestTSConv:
    def test_dimension_arithmetic_published_case(self):
        # C=17, T=250: conv (1,226), pool (1,36), spatial 40x1x36 -> F=1440
        assert tsconv_flat_features(17, 250) == 1440

    def test_dimension_arithmetic_closed_form(self):
        for c, t in [(2, 80), (8, 100), (17, 250), (32, 256)]:
            t_conv = t - 25 + 1
            t_pool = (t_conv - 51) // 5 + 1
            assert tsconv_flat_features(c, t) == 40 * t_pool

    def test_time_axis_too_short(self):
        with pytest.raises(ValueError, match="too short"):
            tsconv_flat_features(4, 74)

    def test_all_zero_params_yield_beta(self):
        p = ts_params_64()
        for name, arr in p.param_dict().items():
            if name not in ("gamma", "beta"):
                arr[...] = 0.0
        p.beta[...] = Rng(12).normal((8,), dtype=np.float64)
        x = Rng(13).normal((3, 2, 80), dtype=np.float64)
        z, _ = tsconv_forward(p, x, mode="eval")
        np.testing.assert_allclose(z, np.broadcast_to(p.beta, z.shape), atol=1e-12)

    def test_forward_shapes(self):
        p = ts_params_64(c=2, t=80, d=8)
        x = Rng(14).normal((5, 2, 80), dtype=np.float64)
        z, cache = tsconv_forward(p, x, mode="eval")
        assert z.shape == (5, 8)
        _, _, t1, p1, s1, flat, _ = cache
        assert t1.shape == (5, 40, 2, 56)
        assert p1.shape == (5, 40, 2, 2)
        assert s1.shape == (5, 40, 1, 2)
        assert flat.shape == (5, 80)

    def test_gradients_match_finite_differences(self):
        p = ts_params_64(c=2, t=80, d=8)
        x = Rng(15).normal((2, 2, 80), dtype=np.float64)
        g = Rng(16).normal((2, 8), dtype=np.float64)

        def loss():
            z, _ = tsconv_forward(p, x, mode="eval")
            return float((z * g).sum())

        _, cache = tsconv_forward(p, x, mode="eval")
        grads, gx = tsconv_backward(p, cache, g)
        for name, arr in p.param_dict().items():
            assert_grad_close(grads[name], numeric_grad(loss, arr),
                              GRAD_TOL_64, f"tsconv {name}")
        assert_grad_close(gx, numeric_grad(loss, x), GRAD_TOL_64, "tsconv input")


class TestInit:
    def test_fixed_seed_identical(self):
        p1 = init_params("eegproject", 4, 8, 16, Rng(42))
        p2 = init_params("eegproject", 4, 8, 16, Rng(42))
        for k in p1.param_dict():
            np.testing.assert_array_equal(p1.param_dict()[k], p2.param_dict()[k])

    def test_gamma_ones_biases_zero(self):
        p = init_params("tsconv", 2, 80, 8, Rng(0))
        np.testing.assert_array_equal(p.gamma, 1.0)
        for name in ("b_temporal", "b_spatial", "b_proj", "b1", "beta"):
            np.testing.assert_array_equal(p.param_dict()[name], 0.0)

    def test_weight_std_matches_glorot(self):
        # 10^4 samples: empirical std within 10% of sqrt(2/(fan_in+fan_out))
        p = init_params("eegproject", 10, 10, 100, Rng(3))
        expected = np.sqrt(2.0 / (100 + 100))
        got = float(p.W1.std())
        assert abs(got - expected) / expected < 0.10

    def test_unknown_arch(self):
        with pytest.raises(ValueError, match="unknown encoder"):
            init_params("transformer", 4, 8, 16, Rng(0))
