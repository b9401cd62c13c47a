"""Tests for the pseudo-labeling pipeline: centers, similarity, labels,
threshold, confident selection, class weights, and the end-to-end behavior on
a separable zero-shift scenario.
"""

import math

import numpy as np
import pytest
from scipy.spatial.distance import jensenshannon

from vipda.core_math import softmax
from vipda.data import ScenarioSpec, generate_scenario
from vipda.labeling import (
    class_centers,
    class_weights,
    confidence_threshold,
    confident_targets,
    estimate_labeling,
    initial_labeling_state,
    labeling_record,
    pseudo_label,
    similarity,
    similarity_matrix,
)
from vipda.networks import NetConfig, init_params, latent_mean


class TestClassCenters:
    def test_midpoint(self):
        bank = class_centers(np.array([[1.0, 0.0], [3.0, 0.0]]), np.array([0, 0]), 1)
        np.testing.assert_array_equal(bank.centers, [[2.0, 0.0]])
        assert bank.counts[0] == 2

    def test_single_sample_class(self):
        lat = np.array([[1.0, 2.0], [5.0, 5.0], [7.0, 7.0]])
        bank = class_centers(lat, np.array([0, 1, 1]), 2)
        np.testing.assert_array_equal(bank.centers[0], [1.0, 2.0])

    def test_against_brute_force_means(self):
        rng = np.random.default_rng(0)
        lat = rng.standard_normal((40, 3))
        labels = rng.integers(0, 4, 40)
        labels[:4] = [0, 1, 2, 3]
        bank = class_centers(lat, labels, 4)
        for c in range(4):
            members = [lat[i] for i in range(40) if labels[i] == c]
            np.testing.assert_allclose(bank.centers[c], np.mean(members, axis=0), atol=1e-12)
            assert bank.counts[c] == len(members)

    def test_absent_class_named_in_error(self):
        with pytest.raises(ValueError, match="class 2"):
            class_centers(np.zeros((2, 2)), np.array([0, 1]), 3)


class TestSimilarity:
    def test_own_center_scores_one(self):
        rng = np.random.default_rng(1)
        centers = rng.standard_normal((4, 3))
        bank = class_centers(centers, np.arange(4), 4)
        for c in range(4):
            sims = similarity(centers[c], bank)
            assert sims[c] == pytest.approx(1.0, abs=1e-12)
            assert np.argmax(sims) == c

    def test_range(self):
        rng = np.random.default_rng(2)
        bank = class_centers(rng.standard_normal((5, 4)), np.arange(5), 5)
        for _ in range(50):
            sims = similarity(rng.standard_normal(4) * 3, bank)
            assert ((sims >= 0.5) & (sims <= 1.0)).all()

    def test_composition_oracle(self):
        # independent path: plain softmax + scipy Jensen-Shannon distance
        rng = np.random.default_rng(3)
        centers = rng.standard_normal((4, 3))
        bank = class_centers(centers, np.arange(4), 4)
        for _ in range(20):
            z = rng.standard_normal(3) * 2
            got = similarity(z, bank)
            pz = np.exp(z) / np.exp(z).sum()
            for c in range(4):
                pc = np.exp(centers[c]) / np.exp(centers[c]).sum()
                js = jensenshannon(pz, pc, base=2) ** 2
                assert got[c] == pytest.approx((2 - js) / 2, abs=1e-9)

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(4)
        bank = class_centers(rng.standard_normal((3, 5)), np.arange(3), 3)
        latents = rng.standard_normal((10, 5))
        M = similarity_matrix(latents, bank)
        for i in range(10):
            np.testing.assert_allclose(M[i], similarity(latents[i], bank), atol=1e-12)

    def test_dimension_mismatch(self):
        bank = class_centers(np.zeros((2, 3)), np.arange(2), 2)
        with pytest.raises(ValueError):
            similarity(np.zeros(4), bank)


class TestPseudoLabel:
    def test_argmax_example(self):
        probs, label = pseudo_label(np.array([1.0, 0.5, 0.5]))
        assert label == 0
        np.testing.assert_allclose(probs, softmax([1.0, 0.5, 0.5]))

    def test_constant_similarities_tie_to_zero(self):
        probs, label = pseudo_label(np.full(4, 0.7))
        assert label == 0
        np.testing.assert_allclose(probs, np.full(4, 0.25), atol=1e-15)

    def test_matches_softmax_argmax_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            sim = rng.uniform(0.5, 1.0, 6)
            probs, label = pseudo_label(sim)
            e = [math.exp(s) for s in sim]
            oracle = [v / sum(e) for v in e]
            np.testing.assert_allclose(probs, oracle, atol=1e-12)
            assert label == int(np.argmax(oracle))


class TestConfidenceThreshold:
    def test_single_sample(self):
        # a single row: T equals its own max softmax probability
        sim = np.array([[2.0, 0.0, 0.0]])
        assert confidence_threshold(sim) == pytest.approx(float(softmax(sim[0]).max()))

    def test_identical_rows(self):
        sim = np.tile([1.0, 0.6, 0.5], (7, 1))
        assert confidence_threshold(sim) == pytest.approx(float(softmax(sim[0]).max()))

    def test_bounds(self):
        rng = np.random.default_rng(6)
        for k in (2, 5, 9):
            sims = rng.uniform(0.5, 1.0, (30, k))
            t = confidence_threshold(sims)
            assert 1.0 / k <= t <= 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            confidence_threshold(np.zeros((0, 3)))


class TestConfidentTargets:
    def test_filtering(self):
        probs = np.array([[0.9, 0.1], [0.4, 0.6]])
        keep, labels, kept = confident_targets(probs, np.array([0, 1]), 0.7)
        np.testing.assert_array_equal(keep, [0])
        np.testing.assert_array_equal(labels, [0])
        np.testing.assert_array_equal(kept, [[0.9, 0.1]])

    def test_minimum_threshold_keeps_all(self):
        rng = np.random.default_rng(7)
        probs = softmax(rng.uniform(0.5, 1.0, (20, 5)))
        keep, _, _ = confident_targets(probs, np.argmax(probs, axis=1), 1.0 / 5)
        np.testing.assert_array_equal(keep, np.arange(20))

    def test_order_preserved_and_matches_filter_oracle(self):
        rng = np.random.default_rng(8)
        probs = softmax(rng.uniform(0.5, 1.0, (30, 4)))
        labels = np.argmax(probs, axis=1)
        t = 0.26
        keep, kept_labels, kept_probs = confident_targets(probs, labels, t)
        oracle = [i for i in range(30) if probs[i].max() >= t]
        np.testing.assert_array_equal(keep, oracle)
        assert (np.diff(keep) > 0).all()


class TestClassWeights:
    def test_single_target(self):
        np.testing.assert_allclose(
            class_weights(np.array([[0.2, 0.8]]), 2), [0.25, 1.0], atol=1e-15
        )

    def test_max_is_one(self):
        rng = np.random.default_rng(9)
        probs = softmax(rng.uniform(0.5, 1.0, (25, 5)))
        W = class_weights(probs, 5)
        assert W.max() == 1.0
        assert ((W > 0) & (W <= 1)).all()

    def test_empty_fallback_all_ones(self):
        np.testing.assert_array_equal(class_weights(np.zeros((0, 4)), 4), np.ones(4))

    def test_mean_then_normalize_oracle(self):
        rng = np.random.default_rng(10)
        probs = softmax(rng.uniform(0.5, 1.0, (12, 3)))
        raw = [sum(probs[i][c] for i in range(12)) / 12 for c in range(3)]
        oracle = np.array(raw) / max(raw)
        np.testing.assert_allclose(class_weights(probs, 3), oracle, atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(11)
        probs = softmax(rng.uniform(0.5, 1.0, (40, 5)))
        W1 = class_weights(probs, 5)
        W2 = class_weights(probs[rng.permutation(40)], 5)
        np.testing.assert_allclose(W1, W2, atol=1e-12)


def zero_shift_latents(seed=0):
    """Well-separated zero-shift scenario mapped through an untrained encoder."""
    spec = ScenarioSpec(
        circle_radius=10.0,
        noise_scale=0.0,
        rotation=0.0,
        translation=(0.0, 0.0),
        source_per_class=30,
        target_per_class=20,
        seed=seed,
    )
    ds = generate_scenario(spec)
    cfg = NetConfig(input_dim=2, latent_dim=4, n_classes=5, feature_dim=8,
                    enc_hidden=(16,), head_init_scale=1.0)
    params = init_params(cfg, np.random.default_rng(seed))
    src = latent_mean(params, cfg, ds.source_x)
    tgt = latent_mean(params, cfg, ds.target_x)
    return ds, src, tgt


class TestEndToEnd:
    def test_zero_shift_pseudo_labels_exact_and_weights_separate(self):
        ds, src, tgt = zero_shift_latents()
        state = estimate_labeling(src, ds.source_y, tgt, 5)
        # with zero shift and zero noise, every confident pseudo-label is right
        sims = similarity_matrix(tgt, class_centers(src, ds.source_y, 5))
        hard = np.argmax(softmax(sims), axis=1)
        assert (hard == ds.hidden_target_labels).all()
        assert 1.0 / 5 <= state.threshold <= 1.0
        assert state.class_weights.max() == 1.0
        shared = state.class_weights[:3]
        outliers = state.class_weights[3:]
        assert shared.min() > outliers.max()

    def test_deterministic(self):
        ds, src, tgt = zero_shift_latents()
        a = estimate_labeling(src, ds.source_y, tgt, 5)
        b = estimate_labeling(src, ds.source_y, tgt, 5)
        assert a.threshold == b.threshold
        assert np.array_equal(a.conf_indices, b.conf_indices)
        assert np.array_equal(a.conf_probs, b.conf_probs)
        assert np.array_equal(a.class_weights, b.class_weights)

    def test_initial_state(self):
        state = initial_labeling_state(5)
        np.testing.assert_array_equal(state.class_weights, np.ones(5))
        assert state.n_confident == 0

    def test_diagnostics_record(self):
        state = initial_labeling_state(3)
        line = labeling_record(4, state)
        assert line.startswith("epoch=4 ")
        assert "n_confident=0" in line and "W=" in line
