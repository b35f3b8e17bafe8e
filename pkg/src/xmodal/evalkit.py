"""Split construction, classification metrics, and the per-layer sweep driver.

LOSO builds one fold per subject; k-fold stratifies per class by round-robin
assignment after a seeded shuffle. Metrics are macro-F1 (a class with P+R=0
contributes 0), accuracy, and AUC with the half-credit tie convention
(multiclass: unweighted one-vs-rest mean over classes present in y_true).
Aggregates are mean +/- population std over folds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .probe import (
    EmbeddingScaler,
    TrainConfig,
    indices_digest,
    predict_batch,
    train_probe,
)

SCHEME_LOSO = "loso"
SCHEME_KFOLD = "kfold"


class SplitError(ValueError):
    """Split construction preconditions violated."""


class StratificationError(SplitError):
    def __init__(self, label, count: int, k: int):
        super().__init__(
            f"class {label!r} has {count} records, fewer than k={k}; "
            f"stratified folds are impossible"
        )
        self.label = label


class UndefinedAUCError(ValueError):
    """Binary AUC requested with only one class present."""


@dataclass
class SplitPlan:
    scheme: str
    folds: list  # list of (train indices, test indices) int64 arrays
    seed: int = 0

    @property
    def n_folds(self) -> int:
        return len(self.folds)


def make_loso_splits(manifest) -> SplitPlan:
    """One fold per subject; the held-out subject's records are the test set."""
    subjects = [r.subject_id for r in manifest.records]
    distinct = sorted(set(subjects))
    if len(distinct) < 2:
        raise SplitError(
            f"leave-one-subject-out needs >= 2 subjects, got {len(distinct)}"
        )
    folds = []
    all_idx = np.arange(len(subjects), dtype=np.int64)
    per_subject = {s: all_idx[[sub == s for sub in subjects]] for s in distinct}
    for s in distinct:
        test = per_subject[s]
        train = np.concatenate([per_subject[o] for o in distinct if o != s])
        folds.append((np.sort(train), np.sort(test)))
    return SplitPlan(scheme=SCHEME_LOSO, folds=folds, seed=0)


def make_kfold_splits(manifest, k: int, seed: int = 0) -> SplitPlan:
    """Stratified k-fold: per-class round-robin after a seeded shuffle."""
    if k < 2:
        raise SplitError(f"k must be >= 2, got {k}")
    labels = manifest.label_ids()
    rng = np.random.default_rng(seed)
    assignment = np.full(labels.size, -1, dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            name = manifest.labels[cls] if cls < len(manifest.labels) else cls
            raise StratificationError(name, int(idx.size), k)
        shuffled = rng.permutation(idx)
        for pos, record in enumerate(shuffled):
            assignment[record] = pos % k
    folds = []
    all_idx = np.arange(labels.size, dtype=np.int64)
    for f in range(k):
        test = all_idx[assignment == f]
        train = all_idx[assignment != f]
        folds.append((train, test))
    return SplitPlan(scheme=SCHEME_KFOLD, folds=folds, seed=seed)


def split_plan_for(manifest, seed: int = 0) -> SplitPlan:
    scheme = manifest.eval_scheme
    if scheme.scheme == SCHEME_LOSO:
        return make_loso_splits(manifest)
    return make_kfold_splits(manifest, scheme.k, seed)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    return float((y_true == y_pred).mean())


def macro_f1(y_true, y_pred, n_classes: int) -> float:
    """Unweighted mean of per-class F1 over all n_classes classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    if y_true.size and (min(y_true.min(), y_pred.min()) < 0
                        or max(y_true.max(), y_pred.max()) >= n_classes):
        raise ValueError(f"labels outside 0..{n_classes - 1}")
    confusion = np.bincount(
        y_true * n_classes + y_pred, minlength=n_classes * n_classes
    ).reshape(n_classes, n_classes)
    tp = np.diag(confusion)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    total = 0.0
    for c in range(n_classes):
        denom_p = int(tp[c] + fp[c])
        denom_r = int(tp[c] + fn[c])
        precision = int(tp[c]) / denom_p if denom_p else 0.0
        recall = int(tp[c]) / denom_r if denom_r else 0.0
        total += 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return total / n_classes


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    n = values.size
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _binary_auc(y_true: np.ndarray, scores: np.ndarray) -> float:
    pos = y_true == 1
    n_pos = int(pos.sum())
    n_neg = y_true.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(
            "AUC undefined: need both classes present, got one"
        )
    # Mann-Whitney U via average ranks == (concordant + 0.5 ties) / (pos * neg)
    ranks = _average_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc(y_true, scores) -> float:
    """Binary AUC for 1-D scores; macro one-vs-rest for (N, C) probabilities.

    Multiclass averages over classes present in y_true only.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        if scores.shape != y_true.shape:
            raise ValueError(f"scores shape {scores.shape} != labels {y_true.shape}")
        if not np.isin(y_true, (0, 1)).all():
            raise ValueError("binary AUC expects labels in {0, 1}")
        return _binary_auc(y_true, scores)
    if scores.ndim != 2 or scores.shape[0] != y_true.size:
        raise ValueError(
            f"scores must be (N,) or (N, C) aligned with labels, got {scores.shape}"
        )
    present = np.unique(y_true)
    if present.size < 2:
        raise UndefinedAUCError("AUC undefined: only one class present")
    parts = [
        _binary_auc((y_true == c).astype(np.int64), scores[:, c]) for c in present
    ]
    return float(np.mean(parts))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class FoldMetrics:
    fold: int
    macro_f1: float
    accuracy: float
    auc: float | None
    n_train: int
    n_test: int
    scaler_provenance: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "fold": self.fold,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "auc": self.auc,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "scaler_provenance": self.scaler_provenance,
        }


def aggregate_metrics(folds) -> dict:
    """Mean +/- population std per metric; recomputable from the fold list."""
    out = {}
    for name in ("macro_f1", "accuracy", "auc"):
        values = [getattr(f, name) for f in folds if getattr(f, name) is not None]
        if values:
            arr = np.array(values, dtype=np.float64)
            out[name] = {
                "mean": float(arr.mean()),
                "std": float(arr.std()),
                "n_folds": len(values),
            }
        else:
            out[name] = {"mean": None, "std": None, "n_folds": 0}
    return out


@dataclass
class MetricReport:
    config: dict
    folds: list
    aggregate: dict = field(default_factory=dict)

    def finalize(self) -> "MetricReport":
        self.aggregate = aggregate_metrics(self.folds)
        return self

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "folds": [f.to_json_dict() for f in self.folds],
            "aggregate": self.aggregate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=1)


@dataclass
class SweepReport:
    config: dict
    layers: dict = field(default_factory=dict)  # layer -> MetricReport
    errors: dict = field(default_factory=dict)  # layer -> message

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "layers": {
                str(l): r.to_json_dict() for l, r in sorted(self.layers.items())
            },
            "errors": {str(l): m for l, m in sorted(self.errors.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=1)


def sweep_csv(report: SweepReport, metric: str = "macro_f1") -> str:
    """Plot-ready (layer, mean, std) rows for one metric."""
    lines = ["layer,mean,std"]
    for layer in sorted(report.layers):
        agg = report.layers[layer].aggregate[metric]
        lines.append(f"{layer},{agg['mean']!r},{agg['std']!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Probe evaluation over a split plan
# ---------------------------------------------------------------------------


def evaluate_layer(
    cache,
    layer: int,
    plan: SplitPlan,
    probe_kind: str,
    train_config: TrainConfig,
    n_classes: int,
    hidden_dim: int = 512,
    config_echo: dict | None = None,
) -> MetricReport:
    """Train one probe per fold on z-scored embeddings; test-fold statistics
    never enter the scaler (fit on the train fold only, provenance recorded)."""
    x = cache.matrix(layer)
    y = cache.labels()
    folds = []
    for fold_id, (train_idx, test_idx) in enumerate(plan.folds):
        scaler = EmbeddingScaler.fit(
            x[train_idx],
            provenance={
                "fold": fold_id,
                "n": int(train_idx.size),
                "train_indices_sha": indices_digest(train_idx),
                "source": "train-fold",
            },
        )
        model, _ = train_probe(
            scaler.transform(x[train_idx]),
            y[train_idx],
            train_config,
            kind=probe_kind,
            n_classes=n_classes,
            hidden_dim=hidden_dim,
        )
        probs = predict_batch(model, scaler.transform(x[test_idx]))
        y_test = y[test_idx]
        y_pred = probs.argmax(axis=1)
        try:
            fold_auc = auc(y_test, probs)
        except UndefinedAUCError:
            fold_auc = None
        folds.append(
            FoldMetrics(
                fold=fold_id,
                macro_f1=macro_f1(y_test, y_pred, n_classes),
                accuracy=accuracy(y_test, y_pred),
                auc=fold_auc,
                n_train=int(train_idx.size),
                n_test=int(test_idx.size),
                scaler_provenance=scaler.provenance,
            )
        )
    echo = dict(config_echo or {})
    echo.update(
        {
            "layer": layer,
            "probe": probe_kind,
            "hidden_dim": hidden_dim if probe_kind == "mlp" else 0,
            "n_classes": n_classes,
            "scheme": plan.scheme,
            "split_seed": plan.seed,
            "train": train_config.to_json_dict(),
        }
    )
    return MetricReport(config=echo, folds=folds).finalize()


def run_layer_sweep(
    cache,
    layers,
    plan: SplitPlan,
    probe_kind: str,
    train_config: TrainConfig,
    n_classes: int,
    hidden_dim: int = 512,
    config_echo: dict | None = None,
) -> SweepReport:
    """One MetricReport per layer with identical training config; per-layer
    failures are collected so a partial report still comes out."""
    echo = dict(config_echo or {})
    echo.update(
        {
            "layers": sorted(int(l) for l in layers),
            "probe": probe_kind,
            "scheme": plan.scheme,
            "split_seed": plan.seed,
            "train": train_config.to_json_dict(),
        }
    )
    report = SweepReport(config=echo)
    for layer in sorted(int(l) for l in layers):
        try:
            report.layers[layer] = evaluate_layer(
                cache, layer, plan, probe_kind, train_config, n_classes,
                hidden_dim, config_echo,
            )
        except (ValueError, ArithmeticError, KeyError) as exc:
            report.errors[layer] = f"{type(exc).__name__}: {exc}"
    return report
