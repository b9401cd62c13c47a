"""Tests for the network components: shape contracts, determinism, the
reparameterized sampler, gradient reversal semantics and checkpoint IO.

The finite-difference verification of all backward passes lives in the
gradcheck module and is exercised by the acceptance suite.
"""

import numpy as np
import pytest

from vipda.networks import (
    ClassPriorBank,
    LatentGaussian,
    NetConfig,
    NonFiniteActivationError,
    classify,
    decode,
    discriminate,
    forward_latent,
    grad_reverse,
    grad_reverse_backward,
    init_params,
    latent_mean,
    load_array_map,
    mlp_forward,
    sample_latent,
    save_array_map,
)


@pytest.fixture
def cfg():
    return NetConfig(
        input_dim=4,
        latent_dim=3,
        n_classes=4,
        feature_dim=5,
        enc_hidden=(6,),
        dec_hidden=(6,),
        cls_hidden=(6,),
        dis_hidden=(6, 6),
    )


@pytest.fixture
def params(cfg):
    return init_params(cfg, np.random.default_rng(42))


class TestForwardPasses:
    def test_latent_shapes(self, cfg, params):
        x = np.random.default_rng(0).standard_normal((7, cfg.input_dim))
        g = forward_latent(params, cfg, x)
        assert g.mean.shape == (7, cfg.latent_dim)
        assert g.logvar.shape == (7, cfg.latent_dim)

    def test_single_vector_roundtrip(self, cfg, params):
        x = np.random.default_rng(1).standard_normal(cfg.input_dim)
        g = forward_latent(params, cfg, x)
        assert g.mean.shape == (cfg.latent_dim,)

    def test_determinism_bit_identical(self, cfg, params):
        x = np.random.default_rng(2).standard_normal((5, cfg.input_dim))
        g1 = forward_latent(params, cfg, x)
        g2 = forward_latent(params, cfg, x)
        assert np.array_equal(g1.mean, g2.mean)
        assert np.array_equal(g1.logvar, g2.logvar)
        z = np.random.default_rng(3).standard_normal((5, cfg.latent_dim))
        assert np.array_equal(decode(params, cfg, z), decode(params, cfg, z))
        assert np.array_equal(classify(params, cfg, z), classify(params, cfg, z))

    def test_dimension_mismatch_errors(self, cfg, params):
        with pytest.raises(ValueError):
            forward_latent(params, cfg, np.zeros(cfg.input_dim + 1))
        with pytest.raises(ValueError):
            decode(params, cfg, np.zeros(cfg.latent_dim + 2))
        with pytest.raises(ValueError):
            classify(params, cfg, np.zeros(1))
        with pytest.raises(ValueError):
            discriminate(params, cfg, np.zeros(cfg.feature_dim - 1))

    def test_decode_output_dimension(self, cfg, params):
        z = np.random.default_rng(4).standard_normal((3, cfg.latent_dim))
        assert decode(params, cfg, z).shape == (3, cfg.input_dim)

    def test_classify_on_simplex(self, cfg, params):
        z = np.random.default_rng(5).standard_normal((6, cfg.latent_dim))
        probs = classify(params, cfg, z)
        assert probs.shape == (6, cfg.n_classes)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_final_layer_gives_uniform(self, cfg, params):
        p = dict(params)
        last = len(cfg.layer_sizes("cls")) - 2
        p[f"cls/{last}/W"] = np.zeros_like(params[f"cls/{last}/W"])
        p[f"cls/{last}/b"] = np.zeros_like(params[f"cls/{last}/b"])
        z = np.random.default_rng(6).standard_normal(cfg.latent_dim)
        np.testing.assert_allclose(
            classify(p, cfg, z), np.full(cfg.n_classes, 1 / cfg.n_classes), atol=1e-15
        )

    def test_discriminator_bounds_and_zero_layer(self, cfg, params):
        p = dict(params)
        last = len(cfg.layer_sizes("dis")) - 2
        p[f"dis/{last}/W"] = np.zeros_like(params[f"dis/{last}/W"])
        p[f"dis/{last}/b"] = np.zeros_like(params[f"dis/{last}/b"])
        f = np.random.default_rng(7).standard_normal(cfg.feature_dim)
        assert discriminate(p, cfg, f) == 0.5
        probs = discriminate(
            params, cfg, np.random.default_rng(8).standard_normal((20, cfg.feature_dim))
        )
        assert ((probs > 0.0) & (probs < 1.0)).all()

    def test_non_finite_activation_names_layer(self, cfg, params):
        p = dict(params)
        p["enc/1/W"] = params["enc/1/W"].copy()
        p["enc/1/W"][0, 0] = np.inf
        with pytest.raises(NonFiniteActivationError, match="enc layer 1"):
            forward_latent(params=p, cfg=cfg, x=np.ones(cfg.input_dim))

    def test_dropout_needs_rng_and_changes_training_pass(self, cfg, params):
        f = np.random.default_rng(9).standard_normal((4, cfg.feature_dim))
        with pytest.raises(ValueError):
            mlp_forward(params, cfg, "dis", f, train=True, rng=None)
        out_train, _ = mlp_forward(
            params, cfg, "dis", f, train=True, rng=np.random.default_rng(0)
        )
        out_eval, _ = mlp_forward(params, cfg, "dis", f)
        assert not np.array_equal(out_train, out_eval)


class TestSampleLatent:
    def test_zero_eps_returns_mean(self):
        g = LatentGaussian(mean=np.array([1.0, -2.0]), logvar=np.array([0.3, -0.7]))
        np.testing.assert_array_equal(sample_latent(g, np.zeros(2)), g.mean)

    def test_monte_carlo_moments(self):
        # 1e5 draws; sample mean within 3 SE of mean, sample variance within
        # 3 SE of exp(logvar)
        rng = np.random.default_rng(10)
        mean = np.array([0.5, -1.5, 2.0])
        logvar = np.array([0.0, -1.0, 0.8])
        n = 100_000
        g = LatentGaussian(mean=np.tile(mean, (n, 1)), logvar=np.tile(logvar, (n, 1)))
        z = sample_latent(g, rng.standard_normal((n, 3)))
        var = np.exp(logvar)
        se_mean = np.sqrt(var / n)
        assert (np.abs(z.mean(axis=0) - mean) < 3 * se_mean).all()
        se_var = var * np.sqrt(2.0 / (n - 1))
        assert (np.abs(z.var(axis=0, ddof=1) - var) < 3 * se_var).all()

    def test_gradient_wrt_mean_is_identity(self):
        # z = mean + exp(logvar/2) * eps is affine in mean with unit slope
        rng = np.random.default_rng(11)
        mean = rng.standard_normal(4)
        logvar = rng.standard_normal(4)
        eps = rng.standard_normal(4)
        h = 1e-6
        for j in range(4):
            bumped = mean.copy()
            bumped[j] += h
            dz = (
                sample_latent(LatentGaussian(bumped, logvar), eps)
                - sample_latent(LatentGaussian(mean, logvar), eps)
            ) / h
            expect = np.zeros(4)
            expect[j] = 1.0
            np.testing.assert_allclose(dz, expect, atol=1e-9)

    def test_shape_mismatch(self):
        g = LatentGaussian(mean=np.zeros(3), logvar=np.zeros(3))
        with pytest.raises(ValueError):
            sample_latent(g, np.zeros(2))


class TestGradReverse:
    def test_forward_identity(self):
        v = np.array([1.0, -2.0, 3.0])
        assert grad_reverse(v, 0.7) is v

    def test_backward_scales_by_minus_lambda(self):
        d = np.array([1.0, 2.0, -1.0])
        np.testing.assert_array_equal(grad_reverse_backward(d, 0.5), -0.5 * d)

    def test_lambda_zero_blocks_gradient(self):
        d = np.ones(4)
        np.testing.assert_array_equal(grad_reverse_backward(d, 0.0), np.zeros(4))

    def test_non_finite_lambda_rejected(self):
        with pytest.raises(ValueError):
            grad_reverse(np.ones(2), float("nan"))


class TestPriorBank:
    def test_fixed_unit_variance(self):
        bank = ClassPriorBank(means=np.random.default_rng(12).standard_normal((5, 3)))
        assert bank.n_classes == 5
        np.testing.assert_array_equal(bank.logvars, np.zeros((5, 3)))


class TestCheckpointIO:
    def test_round_trip_bit_exact(self, cfg, params, tmp_path):
        path = tmp_path / "params.npz"
        save_array_map(path, params)
        loaded = load_array_map(path)
        assert set(loaded) == set(params)
        for key in params:
            assert np.array_equal(loaded[key], params[key])
            assert loaded[key].dtype == params[key].dtype

    def test_reserved_key_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_array_map(tmp_path / "x.npz", {"__format_version__": np.zeros(1)})

    def test_missing_version_rejected(self, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(path, a=np.zeros(2))
        with pytest.raises(ValueError, match="format version"):
            load_array_map(path)

    def test_latent_mean_matches_forward_latent(self, cfg, params):
        x = np.random.default_rng(13).standard_normal((6, cfg.input_dim))
        np.testing.assert_array_equal(
            latent_mean(params, cfg, x), forward_latent(params, cfg, x).mean
        )
