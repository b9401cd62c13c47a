"""Tests for scenario generation, the dataset text format and batching."""

import math

import numpy as np
import pytest

from vipda.data import (
    DatasetFormatError,
    ScenarioDataset,
    ScenarioSpec,
    TargetCycler,
    batch_iterator,
    epoch_batches,
    generate_scenario,
    load_dataset,
    read_kv_file,
    save_dataset,
    scenario_from_config,
)


class TestScenarioSpec:
    def test_defaults_are_valid(self):
        spec = ScenarioSpec()
        assert spec.n_source_classes == 5 and spec.n_target_classes == 3
        assert spec.rotation == pytest.approx(math.radians(30))

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            ScenarioSpec(n_target_classes=5)  # must be a strict subset
        with pytest.raises(ValueError):
            ScenarioSpec(source_per_class=0)
        with pytest.raises(ValueError):
            ScenarioSpec(translation=(1.0,))
        with pytest.raises(ValueError):
            ScenarioSpec(noise_scale=-0.5)


class TestGenerateScenario:
    def test_counts_match_spec_exactly(self):
        spec = ScenarioSpec(source_per_class=17, target_per_class=9)
        ds = generate_scenario(spec)
        assert len(ds.source_x) == 17 * 5
        assert len(ds.target_x) == 9 * 3
        for c in range(5):
            assert (ds.source_y == c).sum() == 17
        for c in range(3):
            assert (ds.hidden_target_labels == c).sum() == 9

    def test_outlier_classes_only_in_source(self):
        ds = generate_scenario(ScenarioSpec())
        assert set(ds.source_y.tolist()) == set(range(5))
        assert set(ds.hidden_target_labels.tolist()) == set(range(3))

    def test_same_seed_bit_identical(self):
        a = generate_scenario(ScenarioSpec(seed=7))
        b = generate_scenario(ScenarioSpec(seed=7))
        assert np.array_equal(a.source_x, b.source_x)
        assert np.array_equal(a.target_x, b.target_x)
        c = generate_scenario(ScenarioSpec(seed=8))
        assert not np.array_equal(a.source_x, c.source_x)

    def test_zero_shift_zero_noise_means_coincide(self):
        spec = ScenarioSpec(rotation=0.0, translation=(0.0, 0.0), noise_scale=0.0)
        ds = generate_scenario(spec)
        for c in range(3):
            src_mean = ds.source_x[ds.source_y == c].mean(axis=0)
            tgt_mean = ds.target_x[ds.hidden_target_labels == c].mean(axis=0)
            np.testing.assert_allclose(src_mean, tgt_mean, atol=1e-12)

    def test_zero_shift_sampled_means_within_three_standard_errors(self):
        spec = ScenarioSpec(
            rotation=0.0,
            translation=(0.0, 0.0),
            source_per_class=400,
            target_per_class=400,
            seed=3,
        )
        ds = generate_scenario(spec)
        for c in range(3):
            src = ds.source_x[ds.source_y == c]
            tgt = ds.target_x[ds.hidden_target_labels == c]
            se = spec.noise_scale * math.sqrt(1 / len(src) + 1 / len(tgt))
            diff = np.abs(src.mean(axis=0) - tgt.mean(axis=0))
            assert (diff < 3 * se).all()

    def test_rotation_moves_target_means(self):
        ds = generate_scenario(ScenarioSpec(noise_scale=0.0))
        spec = ScenarioSpec(noise_scale=0.0)
        angle = spec.rotation
        c0 = ds.target_x[ds.hidden_target_labels == 0][0]
        src0 = ds.source_x[ds.source_y == 0][0]
        rot = np.array(
            [
                [math.cos(angle), -math.sin(angle)],
                [math.sin(angle), math.cos(angle)],
            ]
        )
        np.testing.assert_allclose(c0, rot @ src0 + np.array(spec.translation), atol=1e-12)

    def test_train_view_hides_labels(self):
        ds = generate_scenario(ScenarioSpec())
        view = ds.train_view()
        assert not hasattr(view, "hidden_target_labels")


class TestDatasetIO:
    def test_round_trip_bit_exact(self, tmp_path):
        ds = generate_scenario(ScenarioSpec(source_per_class=5, target_per_class=4))
        path = tmp_path / "scenario.txt"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert np.array_equal(loaded.source_x, ds.source_x)
        assert np.array_equal(loaded.source_y, ds.source_y)
        assert np.array_equal(loaded.target_x, ds.target_x)
        assert np.array_equal(loaded.hidden_target_labels, ds.hidden_target_labels)
        assert loaded.n_source_classes == 5 and loaded.n_target_classes == 3

    def test_unlabeled_file_disables_evaluation(self, tmp_path):
        ds = generate_scenario(ScenarioSpec(source_per_class=3, target_per_class=2))
        stripped = ScenarioDataset(
            source_x=ds.source_x,
            source_y=ds.source_y,
            target_x=ds.target_x,
            n_source_classes=5,
            n_target_classes=3,
            hidden_target_labels=None,
        )
        path = tmp_path / "unlabeled.txt"
        save_dataset(stripped, path)
        assert "?" in path.read_text()
        loaded = load_dataset(path)
        assert not loaded.has_eval_labels

    def test_truncated_file_is_atomic_error(self, tmp_path):
        ds = generate_scenario(ScenarioSpec(source_per_class=4, target_per_class=3))
        path = tmp_path / "full.txt"
        save_dataset(ds, path)
        lines = path.read_text().splitlines()
        truncated = tmp_path / "truncated.txt"
        truncated.write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(DatasetFormatError, match="expected"):
            load_dataset(truncated)

    def test_malformed_line_reports_line_number(self, tmp_path):
        ds = generate_scenario(ScenarioSpec(source_per_class=3, target_per_class=2))
        path = tmp_path / "bad.txt"
        save_dataset(ds, path)
        lines = path.read_text().splitlines()
        lines[4] = "not,a,valid,row"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="line 5"):
            load_dataset(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "h.txt"
        path.write_text("something else\n")
        with pytest.raises(DatasetFormatError, match="line 1"):
            load_dataset(path)


class TestBatching:
    def test_epoch_covers_every_index_once(self):
        rng = np.random.default_rng(0)
        batches = epoch_batches(25, 8, rng)
        assert [len(b) for b in batches] == [8, 8, 8, 1]
        assert sorted(np.concatenate(batches).tolist()) == list(range(25))

    def test_same_seed_same_order(self):
        ds = generate_scenario(ScenarioSpec(source_per_class=10, target_per_class=5))
        a = batch_iterator(ds, 7, seed=3, domain="source")
        b = batch_iterator(ds, 7, seed=3, domain="source")
        for _ in range(12):
            np.testing.assert_array_equal(next(a), next(b))

    def test_batch_size_at_least_n_gives_single_batch(self):
        rng = np.random.default_rng(1)
        batches = epoch_batches(6, 10, rng)
        assert len(batches) == 1 and len(batches[0]) == 6

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            epoch_batches(0, 4, np.random.default_rng(0))

    def test_unknown_domain(self):
        ds = generate_scenario(ScenarioSpec(source_per_class=3, target_per_class=2))
        with pytest.raises(ValueError):
            batch_iterator(ds, 2, seed=0, domain="both")

    def test_target_cycler_recycles_and_restores(self):
        cyc = TargetCycler(10, 4, np.random.default_rng(5))
        first = [cyc.next_batch() for _ in range(2)]
        state = cyc.get_state()
        tail = [cyc.next_batch() for _ in range(4)]
        cyc2 = TargetCycler(10, 4, np.random.default_rng(0))
        cyc2.set_state(state)
        tail2 = [cyc2.next_batch() for _ in range(4)]
        for a, b in zip(tail, tail2):
            np.testing.assert_array_equal(a, b)
        seen = np.concatenate(first + tail[:1])
        assert sorted(seen.tolist()) == list(range(10))


class TestScenarioConfig:
    def test_parse_full_config(self, tmp_path):
        path = tmp_path / "scenario.cfg"
        path.write_text(
            "# demo scenario\n"
            "input_dim = 2\n"
            "source_classes = 6\n"
            "target_classes = 2\n"
            "source_per_class = 11\n"
            "target_per_class = 7\n"
            "rotation_degrees = 45\n"
            "translation = 0.5,-0.25\n"
            "noise_scale = 0.8\n"
            "circle_radius = 2.5\n"
            "seed = 9\n"
        )
        spec = scenario_from_config(path)
        assert spec.n_source_classes == 6 and spec.n_target_classes == 2
        assert spec.rotation == pytest.approx(math.radians(45))
        assert spec.translation == (0.5, -0.25)
        assert spec.seed == 9

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("wobble = 3\n")
        with pytest.raises(ValueError, match="wobble"):
            scenario_from_config(path)

    def test_kv_parser_errors_carry_line(self, tmp_path):
        path = tmp_path / "kv.cfg"
        path.write_text("a = 1\nnot a pair\n")
        with pytest.raises(ValueError, match="line 2"):
            read_kv_file(path)
