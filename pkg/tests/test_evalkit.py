import itertools
import types

import numpy as np
import pytest

from xmodal.evalkit import (
    FoldMetrics,
    MetricReport,
    SplitError,
    StratificationError,
    UndefinedAUCError,
    accuracy,
    aggregate_metrics,
    auc,
    evaluate_layer,
    macro_f1,
    make_kfold_splits,
    make_loso_splits,
    run_layer_sweep,
    sweep_csv,
)
from xmodal.probe import TrainConfig


def manifest_stub(labels, subjects, label_names=None):
    labels = np.asarray(labels, dtype=np.int64)
    if label_names is None:
        label_names = tuple(f"c{i}" for i in range(int(labels.max()) + 1))
    records = [
        types.SimpleNamespace(label_id=int(l), subject_id=s)
        for l, s in zip(labels, subjects)
    ]
    return types.SimpleNamespace(
        label_ids=lambda: labels,
        labels=tuple(label_names),
        records=records,
    )


# --- independent brute-force oracles -----------------------------------------


def brute_macro_f1(y_true, y_pred, n_classes):
    total = 0.0
    for c in range(n_classes):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        total += (
            2 * precision * recall / (precision + recall) if precision + recall else 0.0
        )
    return total / n_classes


def brute_binary_auc(y_true, scores):
    pos = [s for t, s in zip(y_true, scores) if t == 1]
    neg = [s for t, s in zip(y_true, scores) if t == 0]
    credit = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                credit += 1.0
            elif p == n:
                credit += 0.5
    return credit / (len(pos) * len(neg))


class TestSplits:
    def test_loso_three_subjects(self):
        m = manifest_stub([0, 1, 0, 1, 0, 1], ["A", "A", "B", "B", "C", "C"])
        plan = make_loso_splits(m)
        assert plan.n_folds == 3
        subjects = [r.subject_id for r in m.records]
        fold_a = plan.folds[0]
        assert all(subjects[i] == "A" for i in fold_a[1])
        assert all(subjects[i] != "A" for i in fold_a[0])

    def test_loso_test_union_covers_all_once(self):
        m = manifest_stub([0, 1] * 5, [f"s{i % 3}" for i in range(10)])
        plan = make_loso_splits(m)
        collected = np.sort(np.concatenate([t for _, t in plan.folds]))
        assert np.array_equal(collected, np.arange(10))

    def test_loso_single_subject_error(self):
        with pytest.raises(SplitError):
            make_loso_splits(manifest_stub([0, 1], ["only", "only"]))

    def test_kfold_balanced_two_classes(self):
        m = manifest_stub([0] * 5 + [1] * 5, [""] * 10)
        plan = make_kfold_splits(m, 5, seed=0)
        labels = m.label_ids()
        for train, test in plan.folds:
            assert test.size == 2
            assert np.count_nonzero(labels[test] == 0) == 1
            assert np.count_nonzero(labels[test] == 1) == 1

    def test_kfold_same_seed_identical(self):
        m = manifest_stub([0, 1, 0, 1, 2, 2, 0, 1, 2, 0], [""] * 10)
        a = make_kfold_splits(m, 3, seed=42)
        b = make_kfold_splits(m, 3, seed=42)
        for (ta, sa), (tb, sb) in zip(a.folds, b.folds):
            assert np.array_equal(ta, tb) and np.array_equal(sa, sb)

    def test_kfold_small_class_error_names_class(self):
        m = manifest_stub([0] * 6 + [1] * 3, [""] * 9, label_names=("big", "small"))
        with pytest.raises(StratificationError, match="small"):
            make_kfold_splits(m, 5, seed=0)

    def test_property_random_manifests(self):
        rng = np.random.default_rng(0)
        for trial in range(300):
            n = int(rng.integers(4, 40))
            n_classes = int(rng.integers(2, 4))
            n_subjects = int(rng.integers(2, 6))
            labels = rng.integers(0, n_classes, size=n)
            subjects = [f"s{rng.integers(0, n_subjects)}" for _ in range(n)]
            m = manifest_stub(labels, subjects)

            plan = make_loso_splits(m) if len(set(subjects)) >= 2 else None
            if plan:
                seen = np.concatenate([t for _, t in plan.folds])
                assert np.array_equal(np.sort(seen), np.arange(n))
                for train, test in plan.folds:
                    assert np.intersect1d(train, test).size == 0
                    test_subjects = {subjects[i] for i in test}
                    train_subjects = {subjects[i] for i in train}
                    assert len(test_subjects) == 1
                    assert not (test_subjects & train_subjects)

            k = int(rng.integers(2, 5))
            counts = np.bincount(labels, minlength=n_classes)
            if (counts[counts > 0] >= k).all():
                plan = make_kfold_splits(m, k, seed=trial)
                seen = np.concatenate([t for _, t in plan.folds])
                assert np.array_equal(np.sort(seen), np.arange(n))
                for train, test in plan.folds:
                    assert np.intersect1d(train, test).size == 0
                for cls in np.unique(labels):
                    sizes = [
                        int(np.count_nonzero(labels[test] == cls))
                        for _, test in plan.folds
                    ]
                    assert max(sizes) - min(sizes) <= 1


class TestMacroF1:
    def test_perfect_predictions(self):
        assert macro_f1([0, 1, 2], [0, 1, 2], 3) == 1.0

    def test_worked_example(self):
        got = macro_f1([0, 0, 1, 1], [0, 1, 1, 1], 2)
        assert got == (2 / 3 + 4 / 5) / 2
        assert abs(got - 0.733333333) < 1e-8

    def test_all_one_class_predicted(self):
        got = macro_f1([0, 0, 1, 1], [0, 0, 0, 0], 2)
        assert got == (2 / 3) / 2
        assert abs(got - 1 / 3) < 1e-12

    def test_absent_class_counts_in_mean(self):
        # class 2 never appears; it still divides the mean
        assert macro_f1([0, 1], [0, 1], 3) == 2 / 3

    def test_exhaustive_small_cases(self):
        for n in range(1, 5):
            for y_true in itertools.product(range(3), repeat=n):
                for y_pred in itertools.product(range(3), repeat=n):
                    got = macro_f1(y_true, y_pred, 3)
                    want = brute_macro_f1(y_true, y_pred, 3)
                    assert got == want, (y_true, y_pred)


class TestAUC:
    def test_worked_example(self):
        got = auc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8])
        assert got == 0.75

    def test_perfect_ranking(self):
        assert auc([0, 0, 1, 1], [0.1, 0.2, 0.7, 0.9]) == 1.0

    def test_all_ties_half(self):
        assert auc([0, 1, 0, 1], [0.5, 0.5, 0.5, 0.5]) == 0.5

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedAUCError):
            auc([1, 1, 1], [0.1, 0.5, 0.9])

    def test_exhaustive_binary_grid(self):
        grid = (0.0, 0.5, 1.0)
        for n in range(2, 6):
            for y in itertools.product((0, 1), repeat=n):
                if len(set(y)) < 2:
                    continue
                for scores in itertools.product(grid, repeat=n):
                    got = auc(list(y), list(scores))
                    want = brute_binary_auc(y, scores)
                    assert got == want, (y, scores)

    def test_multiclass_matches_per_class_mean(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(4, 12))
            y = rng.integers(0, 3, size=n)
            if np.unique(y).size < 2:
                continue
            probs = rng.dirichlet(np.ones(3), size=n)
            parts = [
                brute_binary_auc((y == c).astype(int), probs[:, c])
                for c in np.unique(y)
            ]
            assert auc(y, probs) == np.mean(parts)


class TestReports:
    def test_aggregate_recomputable(self):
        folds = [
            FoldMetrics(fold=i, macro_f1=v, accuracy=v / 2, auc=None if i == 1 else v,
                        n_train=8, n_test=2)
            for i, v in enumerate((0.5, 0.7, 0.9))
        ]
        agg = aggregate_metrics(folds)
        f1 = np.array([0.5, 0.7, 0.9])
        assert abs(agg["macro_f1"]["mean"] - f1.mean()) < 1e-12
        assert abs(agg["macro_f1"]["std"] - f1.std()) < 1e-12
        assert agg["auc"]["n_folds"] == 2

    def test_report_json_round_trip(self):
        import json

        folds = [FoldMetrics(fold=0, macro_f1=0.5, accuracy=0.5, auc=0.6,
                             n_train=4, n_test=2)]
        report = MetricReport(config={"probe": "linear"}, folds=folds).finalize()
        doc = json.loads(report.to_json())
        assert doc["aggregate"]["macro_f1"]["mean"] == 0.5


@pytest.fixture(scope="module")
def noise_cache(tmp_path_factory, toy_checkpoint):
    from conftest import write_dataset
    from xmodal.extract import extract_embeddings
    from xmodal.ingest import load_manifest

    root = tmp_path_factory.mktemp("sweep_task")
    rng = np.random.default_rng(0)
    n = 120
    windows = [rng.normal(size=(1, 400)) for _ in range(n)]
    path = write_dataset(
        root, windows, [0] * n, [f"s{i % 4}" for i in range(n)],
        label_names=["a", "b"],
        options={"upsample": 1, "standardize": True},
    )
    manifest = load_manifest(path)
    cache, report = extract_embeddings(manifest, toy_checkpoint, layers=(0, 1, 2))
    assert report.ok
    # labels derived from conv-level (layer 0) representations
    x0 = cache.matrix(0)
    direction = np.random.default_rng(99).normal(size=x0.shape[1])
    score = x0 @ direction
    labels = (score > np.median(score)).astype(int)
    for rec, label in zip(cache.records, labels):
        rec.label_id = int(label)
    return cache


class TestSweep:
    def _plan(self, cache, k=2):
        stub = manifest_stub(cache.labels(), cache.subjects())
        return make_kfold_splits(stub, k, seed=0)

    def test_single_layer_two_folds(self, noise_cache):
        plan = self._plan(noise_cache)
        report = run_layer_sweep(
            noise_cache, (0,), plan, "linear",
            TrainConfig(epochs=10, batch_size=16, seed=0), n_classes=2,
        )
        assert sorted(report.layers) == [0]
        assert len(report.layers[0].folds) == 2

    def test_layer0_informative_labels_rank_layer0_highest(self, noise_cache):
        plan = self._plan(noise_cache)
        report = run_layer_sweep(
            noise_cache, (0, 1, 2), plan, "linear",
            TrainConfig(epochs=50, batch_size=16, seed=0), n_classes=2,
        )
        means = {
            l: report.layers[l].aggregate["macro_f1"]["mean"] for l in (0, 1, 2)
        }
        assert means[0] > means[1]
        assert means[0] > means[2]

    def test_identical_seeds_bit_identical_report(self, noise_cache):
        plan = self._plan(noise_cache)
        cfg = TrainConfig(epochs=5, batch_size=16, seed=3)
        a = run_layer_sweep(noise_cache, (0, 1), plan, "linear", cfg, 2)
        b = run_layer_sweep(noise_cache, (0, 1), plan, "linear", cfg, 2)
        assert a.to_json() == b.to_json()

    def test_scaler_fit_on_train_fold_only(self, noise_cache):
        from xmodal.probe import indices_digest

        plan = self._plan(noise_cache)
        report = evaluate_layer(
            noise_cache, 0, plan, "linear",
            TrainConfig(epochs=2, batch_size=16, seed=0), n_classes=2,
        )
        for fold, (train_idx, _) in zip(report.folds, plan.folds):
            prov = fold.scaler_provenance
            assert prov["source"] == "train-fold"
            assert prov["n"] == train_idx.size
            assert prov["train_indices_sha"] == indices_digest(train_idx)

    def test_partial_report_on_cell_errors(self, noise_cache):
        plan = self._plan(noise_cache)
        # layer 3 is absent from the cache -> per-cell error, partial report
        report = run_layer_sweep(
            noise_cache, (0, 3), plan, "linear",
            TrainConfig(epochs=2, batch_size=16, seed=0), n_classes=2,
        )
        assert 0 in report.layers
        assert 3 in report.errors

    def test_sweep_csv_shape(self, noise_cache):
        plan = self._plan(noise_cache)
        report = run_layer_sweep(
            noise_cache, (0, 1), plan, "linear",
            TrainConfig(epochs=2, batch_size=16, seed=0), n_classes=2,
        )
        lines = sweep_csv(report).strip().split("\n")
        assert lines[0] == "layer,mean,std"
        assert len(lines) == 3
