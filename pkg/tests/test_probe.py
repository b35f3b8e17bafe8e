import numpy as np
import pytest

from xmodal import numkit as nk
from xmodal.probe import (
    DegenerateLabelsError,
    DivergenceError,
    EmbeddingScaler,
    ProbeModel,
    TrainConfig,
    init_probe,
    load_probe,
    predict,
    predict_batch,
    probe_logits,
    save_probe,
    train_probe,
)


def separable_toy(n=60, d=2, margin=1.0, seed=0):
    """Two classes split by the sign of feature 0 with a hard margin."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = (np.arange(n) % 2).astype(np.int64)
    x[:, 0] = np.where(y == 1, margin + rng.uniform(0, 1, n), -margin - rng.uniform(0, 1, n))
    return x, y


class TestTrainProbe:
    def test_linear_separable_reaches_full_accuracy(self):
        x, y = separable_toy()
        model, curve = train_probe(
            x, y, TrainConfig(epochs=50, batch_size=8), kind="linear"
        )
        pred = predict_batch(model, x).argmax(axis=1)
        assert (pred == y).mean() == 1.0
        assert len(curve) == 50
        assert curve[-1] < curve[0]

    def test_mlp_separable(self):
        x, y = separable_toy(seed=1)
        model, _ = train_probe(
            x, y, TrainConfig(epochs=40, batch_size=8), kind="mlp", hidden_dim=16
        )
        pred = predict_batch(model, x).argmax(axis=1)
        assert (pred == y).mean() == 1.0

    def test_degenerate_labels(self):
        x = np.random.default_rng(2).normal(size=(10, 3))
        with pytest.raises(DegenerateLabelsError):
            train_probe(x, np.zeros(10, dtype=np.int64), TrainConfig())

    def test_zero_epochs_returns_init(self):
        x, y = separable_toy(seed=3)
        cfg = TrainConfig(epochs=0, seed=9)
        model, curve = train_probe(x, y, cfg, kind="linear")
        init = init_probe("linear", x.shape[1], 2, seed=9)
        assert curve == []
        assert np.array_equal(model.params["w"], init.params["w"])

    def test_seeded_training_bit_identical(self):
        x, y = separable_toy(seed=4)
        cfg = TrainConfig(epochs=12, seed=5)
        a, curve_a = train_probe(x, y, cfg, kind="mlp", hidden_dim=8)
        b, curve_b = train_probe(x, y, cfg, kind="mlp", hidden_dim=8)
        assert curve_a == curve_b
        for name in a.params:
            assert np.array_equal(a.params[name], b.params[name])

    def test_single_step_decreases_loss_small_lr(self):
        x, y = separable_toy(n=32, seed=6)
        cfg = TrainConfig(learning_rate=1e-4, epochs=1, batch_size=32,
                          weight_decay=0.0, seed=0)
        model, curve = train_probe(x, y, cfg, kind="linear")
        logits = probe_logits(nk.RawOps, model.params, x)
        after = nk.cross_entropy(logits, y)
        assert after < curve[0]

    def test_divergence_detected(self):
        x, y = separable_toy(n=20, seed=7)
        x = x * 1e150  # overflow the logits immediately
        with pytest.raises((DivergenceError, nk.NumericInstabilityError)):
            train_probe(x, y, TrainConfig(learning_rate=1e200, epochs=2), kind="linear")

    def test_gradients_pass_finite_difference(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(6, 5))
        y = np.array([0, 1, 2, 0, 1, 2])
        model = init_probe("mlp", 5, 3, hidden_dim=7, seed=0)

        def op(tape, w1, b1, w2, b2):
            logits = probe_logits(tape, {"w1": w1, "b1": b1, "w2": w2, "b2": b2}, x)
            return tape.cross_entropy(logits, y)

        err = nk.finite_difference_check(
            op,
            [model.params["w1"], model.params["b1"], model.params["w2"],
             model.params["b2"]],
            step=1e-5,
        )
        assert err < 1e-6

    def test_early_stop_with_patience(self):
        x, y = separable_toy(n=40, seed=9)
        cfg = TrainConfig(epochs=200, patience=3, seed=0, batch_size=8)
        # anti-correlated validation labels: val loss rises as training improves
        model, curve = train_probe(
            x, y, cfg, kind="linear", validation=(x[:10], 1 - y[:10])
        )
        assert model.epochs_run < 200

    def test_class_weighting_runs(self):
        x, y = separable_toy(n=30, seed=10)
        cfg = TrainConfig(epochs=5, class_weighting=True)
        model, curve = train_probe(x, y, cfg, kind="linear")
        assert len(curve) == 5


class TestPredict:
    def test_zero_weights_uniform(self):
        model = ProbeModel(
            kind="linear", input_dim=3, n_classes=4, hidden_dim=0,
            params={"w": np.zeros((4, 3)), "b": np.zeros(4)},
        )
        probs = predict(model, np.array([1.0, 2.0, 3.0]))
        assert np.abs(probs - 0.25).max() < 1e-12

    def test_hand_set_feature_picker(self):
        w = np.zeros((2, 3))
        w[1, 0] = 1.0  # class 1 logit = feature 0
        model = ProbeModel(kind="linear", input_dim=3, n_classes=2, hidden_dim=0,
                           params={"w": w, "b": np.zeros(2)})
        assert predict(model, np.array([2.0, 0.0, 0.0])).argmax() == 1
        assert predict(model, np.array([-2.0, 0.0, 0.0])).argmax() == 0

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(11)
        model = init_probe("mlp", 6, 5, hidden_dim=9, seed=3)
        probs = predict(model, rng.normal(size=6))
        assert abs(probs.sum() - 1.0) < 1e-9

    def test_logit_shift_invariance_at_argmax(self):
        rng = np.random.default_rng(12)
        logits = rng.normal(size=(20, 4))
        shifted = logits + 13.7
        assert np.array_equal(
            nk.softmax(logits).argmax(axis=1), nk.softmax(shifted).argmax(axis=1)
        )

    def test_dimension_mismatch(self):
        model = init_probe("linear", 4, 2, seed=0)
        with pytest.raises(nk.ShapeError):
            predict(model, np.zeros(5))


class TestScalerAndSerialization:
    def test_scaler_train_stats_only(self):
        rng = np.random.default_rng(13)
        train = rng.normal(size=(50, 4)) * 3 + 7
        scaler = EmbeddingScaler.fit(train, provenance={"fold": 0, "n": 50})
        out = scaler.transform(train)
        assert np.abs(out.mean(axis=0)).max() < 1e-9
        assert np.abs(out.std(axis=0) - 1.0).max() < 1e-9
        assert scaler.provenance["fold"] == 0

    def test_constant_dimension_guard(self):
        x = np.ones((10, 2))
        x[:, 1] = np.arange(10)
        scaler = EmbeddingScaler.fit(x)
        out = scaler.transform(x)
        assert np.isfinite(out).all()
        assert np.array_equal(out[:, 0], np.zeros(10))

    def test_probe_container_round_trip(self, tmp_path):
        x, y = separable_toy(seed=14)
        model, _ = train_probe(x, y, TrainConfig(epochs=8), kind="mlp", hidden_dim=8)
        scaler = EmbeddingScaler.fit(x)
        path = tmp_path / "probe.bin"
        save_probe(model, path, scaler)
        loaded, loaded_scaler = load_probe(path)
        assert loaded.kind == "mlp"
        assert loaded.input_dim == model.input_dim
        # container stores float32; predictions must agree at that precision
        probs_a = predict_batch(model, x[:5])
        probs_b = predict_batch(loaded, x[:5])
        assert np.abs(probs_a - probs_b).max() < 1e-5
        assert np.abs(loaded_scaler.mean - scaler.mean).max() < 1e-5
