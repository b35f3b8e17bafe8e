import json

import numpy as np
import pytest

from xmodal.ingest import (
    STRATEGY_MAGNITUDE,
    STRATEGY_PER_AXIS,
    ManifestError,
    WindowRecord,
    channelize,
    load_manifest,
    load_window,
    standardize,
    upsample,
)

from conftest import write_dataset


def _window(data, rate=100.0, label=0, subject="s0"):
    return WindowRecord(
        data=np.asarray(data, dtype=np.float64),
        sample_rate=rate,
        label_id=label,
        subject_id=subject,
    )


class TestLoadManifest:
    def test_two_record_toy(self, tmp_path):
        rng = np.random.default_rng(0)
        path = write_dataset(
            tmp_path,
            [rng.normal(size=(2, 50)), rng.normal(size=(2, 50))],
            [0, 1],
            ["a", "b"],
            label_names=["x", "y"],
        )
        manifest = load_manifest(path)
        assert len(manifest.records) == 2
        assert manifest.n_channels == 2
        assert manifest.labels == ("x", "y")

    def test_blank_subject_under_loso(self, tmp_path):
        rng = np.random.default_rng(1)
        path = write_dataset(
            tmp_path,
            [rng.normal(size=(1, 10)), rng.normal(size=(1, 10))],
            [0, 1],
            ["a", ""],
            label_names=["x", "y"],
            eval_scheme={"scheme": "loso"},
        )
        with pytest.raises(ManifestError, match="blank subject"):
            load_manifest(path)

    def test_unknown_label(self, tmp_path):
        rng = np.random.default_rng(2)
        path = write_dataset(
            tmp_path, [rng.normal(size=(1, 10))], [0], ["a"], label_names=["x"]
        )
        doc = json.loads(open(path).read())
        doc["records"][0]["label"] = "mystery"
        open(path, "w").write(json.dumps(doc))
        with pytest.raises(ManifestError, match="mystery"):
            load_manifest(path)

    def test_channel_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(3)
        path = write_dataset(
            tmp_path,
            [rng.normal(size=(3, 10)), rng.normal(size=(3, 10))],
            [0, 1],
            ["a", "b"],
            label_names=["x", "y"],
        )
        # shrink one blob to 2 channels behind the manifest's back
        from xmodal.ingest import save_window_blob

        save_window_blob(tmp_path / "windows" / "000001.f32",
                         rng.normal(size=(2, 10)))
        with pytest.raises(ManifestError, match="record 1"):
            load_manifest(path)

    def test_all_problems_reported(self, tmp_path):
        rng = np.random.default_rng(4)
        path = write_dataset(
            tmp_path,
            [rng.normal(size=(1, 10)) for _ in range(3)],
            [0, 0, 0],
            ["a", "", ""],
            label_names=["x"],
            eval_scheme={"scheme": "loso"},
        )
        with pytest.raises(ManifestError) as info:
            load_manifest(path)
        bad = [p for p in info.value.problems if "blank subject" in p]
        assert len(bad) == 2  # records 1 and 2, both reported

    def test_csv_records_load(self, tmp_path):
        rng = np.random.default_rng(5)
        windows = [rng.normal(size=(2, 16)), rng.normal(size=(2, 16))]
        path = write_dataset(
            tmp_path, windows, [0, 1], ["a", "b"], label_names=["x", "y"],
            csv_indices=(1,),
        )
        manifest = load_manifest(path)
        blob = load_window(manifest, 0)
        csv = load_window(manifest, 1)
        assert blob.data.shape == csv.data.shape == (2, 16)
        assert np.abs(csv.data - windows[1]).max() < 1e-6


class TestUpsample:
    def test_factor_one_identity(self):
        w = _window([[1.0, 2.0, 3.0]])
        out = upsample(w, 1)
        assert np.array_equal(out.data, w.data)
        assert out.sample_rate == w.sample_rate

    def test_hand_interpolation_with_end_repeat(self):
        out = upsample(_window([[0.0, 2.0]]), 2)
        assert np.array_equal(out.data, [[0.0, 1.0, 2.0, 2.0]])
        assert out.sample_rate == 200.0

    def test_reaches_encoder_minimum_length(self):
        out = upsample(_window([np.zeros(200)]), 2)
        assert out.n_samples == 400

    def test_length_composition(self):
        rng = np.random.default_rng(6)
        w = _window(rng.normal(size=(2, 30)))
        double = upsample(upsample(w, 2), 3)
        single = upsample(w, 6)
        assert double.n_samples == single.n_samples == 180


class TestStandardize:
    def test_constant_channel_zeros(self):
        out = standardize(_window([[5.0, 5.0, 5.0]]))
        assert np.array_equal(out.data, np.zeros((1, 3)))

    def test_hand_population_variance(self):
        out = standardize(_window([[1.0, 3.0]]))
        assert np.abs(out.data - [[-1.0, 1.0]]).max() < 1e-12

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        w = _window(rng.normal(size=(3, 64)) * 4 + 2)
        once = standardize(w)
        twice = standardize(once)
        assert np.abs(once.data - twice.data).max() < 1e-9


class TestChannelize:
    def test_single_channel_per_axis(self):
        w = _window([[1.0, 2.0, 3.0]])
        waves = channelize(w, STRATEGY_PER_AXIS)
        assert len(waves) == 1
        assert np.array_equal(waves[0], [1.0, 2.0, 3.0])

    def test_pythagorean_magnitude(self):
        w = _window(np.tile(np.array([[3.0], [4.0], [0.0]]), (1, 5)))
        waves = channelize(w, STRATEGY_MAGNITUDE)
        assert len(waves) == 1
        assert np.abs(waves[0] - 5.0).max() < 1e-12

    def test_three_axis_per_axis(self):
        rng = np.random.default_rng(8)
        w = _window(rng.normal(size=(3, 20)))
        waves = channelize(w, STRATEGY_PER_AXIS)
        assert len(waves) == 3
        assert all(len(v) == 20 for v in waves)
