"""Engineered-features + random-forest benchmark.

The feature recipe is fixed and documented so the baseline is reproducible:
per channel {mean, std, min, max, median, p25, p75, zero-crossing rate,
dominant frequency in Hz, spectral entropy, spectral energy}, pairwise
channel Pearson correlations, and magnitude-signal {mean, std}. Spectral
features come from the magnitude DFT of the mean-removed channel. The
forest grows seeded bootstrap trees with Gini splits over a random sqrt(F)
feature subset per node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ingest import WindowRecord

PER_CHANNEL_FEATURES = (
    "mean",
    "std",
    "min",
    "max",
    "median",
    "p25",
    "p75",
    "zero_crossing_rate",
    "dominant_freq_hz",
    "spectral_entropy",
    "spectral_energy",
)


class WindowTooShortError(ValueError):
    """Feature extraction needs at least two samples."""


def feature_names(n_channels: int):
    names = []
    for c in range(n_channels):
        names.extend(f"ch{c}.{f}" for f in PER_CHANNEL_FEATURES)
    for i in range(n_channels):
        for j in range(i + 1, n_channels):
            names.append(f"corr.ch{i}.ch{j}")
    names.extend(["magnitude.mean", "magnitude.std"])
    return names


def _channel_features(ch: np.ndarray, sample_rate: float):
    n = ch.size
    centered = ch - ch.mean()
    signs = np.sign(centered)
    nonzero = signs != 0
    crossings = 0
    prev = 0.0
    for s in signs[nonzero]:
        if prev != 0.0 and s != prev:
            crossings += 1
        prev = s
    zcr = crossings / (n - 1)

    spectrum = np.abs(np.fft.rfft(centered))
    power = spectrum**2
    dom_bin = int(np.argmax(spectrum))
    dominant_hz = dom_bin * sample_rate / n
    total = power.sum()
    if total > 0 and power.size > 1:
        p = power / total
        nz = p[p > 0]
        entropy = float(-(nz * np.log(nz)).sum() / np.log(power.size))
    else:
        entropy = 0.0
    energy = float(total / n)

    return [
        float(ch.mean()),
        float(ch.std()),
        float(ch.min()),
        float(ch.max()),
        float(np.median(ch)),
        float(np.percentile(ch, 25)),
        float(np.percentile(ch, 75)),
        float(zcr),
        float(dominant_hz),
        entropy,
        energy,
    ]


def engineered_features(window: WindowRecord) -> np.ndarray:
    """Fixed-order feature vector; undefined correlations guard to 0."""
    if window.n_samples < 2:
        raise WindowTooShortError(
            f"need >= 2 samples to extract features, got {window.n_samples}"
        )
    values = []
    for ch in window.data:
        values.extend(_channel_features(ch, window.sample_rate))
    for i in range(window.n_channels):
        for j in range(i + 1, window.n_channels):
            a, b = window.data[i], window.data[j]
            sa, sb = a.std(), b.std()
            if sa < 1e-12 or sb < 1e-12:
                values.append(0.0)
            else:
                values.append(float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb)))
    magnitude = np.sqrt((window.data**2).sum(axis=0))
    values.extend([float(magnitude.mean()), float(magnitude.std())])
    return np.array(values, dtype=np.float64)


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: str = "sqrt"  # "sqrt" | "all"
    bootstrap: bool = True
    seed: int = 0

    def validate(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.features_per_split not in ("sqrt", "all"):
            raise ValueError(f"unknown features_per_split {self.features_per_split!r}")


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    distribution: np.ndarray | None = None  # class probabilities at leaves

    @property
    def is_leaf(self) -> bool:
        return self.distribution is not None


@dataclass
class RandomForest:
    config: ForestConfig
    n_classes: int
    n_features: int
    trees: list = field(default_factory=list)


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - (p * p).sum())


def _best_split(x, y, n_classes, feature_ids, min_leaf):
    """Lowest weighted-Gini (feature, threshold) over candidate midpoints."""
    n = y.size
    parent_counts = np.bincount(y, minlength=n_classes)
    best = (np.inf, -1, 0.0)
    for f in feature_ids:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        ys = y[order]
        left_counts = np.zeros(n_classes)
        right_counts = parent_counts.astype(np.float64).copy()
        for i in range(n - 1):
            left_counts[ys[i]] += 1
            right_counts[ys[i]] -= 1
            if xs[i + 1] == xs[i]:
                continue
            n_left = i + 1
            n_right = n - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            cost = (n_left * _gini(left_counts) + n_right * _gini(right_counts)) / n
            if cost < best[0] - 1e-15:
                best = (cost, f, (xs[i] + xs[i + 1]) / 2.0)
    return best


def _grow_tree(x, y, n_classes, config: ForestConfig, rng, depth=0) -> TreeNode:
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    node = TreeNode()
    pure = np.count_nonzero(counts) <= 1
    at_depth = config.max_depth is not None and depth >= config.max_depth
    if pure or at_depth or y.size < 2 * config.min_samples_leaf:
        node.distribution = counts / counts.sum()
        return node
    n_features = x.shape[1]
    if config.features_per_split == "sqrt":
        k = max(1, int(round(np.sqrt(n_features))))
    else:
        k = n_features
    feature_ids = np.sort(rng.permutation(n_features)[:k])
    cost, feature, threshold = _best_split(x, y, n_classes, feature_ids, config.min_samples_leaf)
    if feature < 0:
        node.distribution = counts / counts.sum()
        return node
    mask = x[:, feature] < threshold
    node.feature = int(feature)
    node.threshold = float(threshold)
    node.left = _grow_tree(x[mask], y[mask], n_classes, config, rng, depth + 1)
    node.right = _grow_tree(x[~mask], y[~mask], n_classes, config, rng, depth + 1)
    return node


def train_forest(x, y, config: ForestConfig = ForestConfig(),
                 n_classes: int | None = None) -> RandomForest:
    """Grow seeded bootstrap trees; deterministic given the config seed."""
    config.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError(f"expected (N, F) features and (N,) labels, got {x.shape}, {y.shape}")
    if np.unique(y).size < 2:
        raise ValueError(
            f"forest training needs >= 2 classes, got {np.unique(y).size}"
        )
    if n_classes is None:
        n_classes = int(y.max()) + 1
    forest = RandomForest(config=config, n_classes=n_classes, n_features=x.shape[1])
    n = x.shape[0]
    for t in range(config.n_trees):
        rng = np.random.default_rng([config.seed, t])
        if config.bootstrap:
            sample = rng.integers(0, n, size=n)
        else:
            sample = np.arange(n)
        forest.trees.append(
            _grow_tree(x[sample], y[sample], n_classes, config, rng)
        )
    return forest


def _tree_distribution(node: TreeNode, row: np.ndarray) -> np.ndarray:
    while not node.is_leaf:
        node = node.left if row[node.feature] < node.threshold else node.right
    return node.distribution


def forest_predict(forest: RandomForest, features) -> np.ndarray:
    """Mean of per-tree leaf distributions; argmax ties go to the lowest class."""
    row = np.asarray(features, dtype=np.float64)
    if row.shape != (forest.n_features,):
        raise ValueError(
            f"feature vector has shape {row.shape}, forest expects ({forest.n_features},)"
        )
    acc = np.zeros(forest.n_classes)
    for tree in forest.trees:
        acc += _tree_distribution(tree, row)
    return acc / len(forest.trees)


def forest_predict_batch(forest: RandomForest, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.stack([forest_predict(forest, row) for row in x])


# ---------------------------------------------------------------------------
# Structured-text serialization (documented, inspectable)
# ---------------------------------------------------------------------------


def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"leaf": [float(p) for p in node.distribution]}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict) -> TreeNode:
    if "leaf" in d:
        return TreeNode(distribution=np.array(d["leaf"], dtype=np.float64))
    return TreeNode(
        feature=int(d["feature"]),
        threshold=float(d["threshold"]),
        left=_node_from_dict(d["left"]),
        right=_node_from_dict(d["right"]),
    )


def forest_to_text(forest: RandomForest) -> str:
    doc = {
        "format": "xmodal-forest-v1",
        "config": {
            "n_trees": forest.config.n_trees,
            "max_depth": forest.config.max_depth,
            "min_samples_leaf": forest.config.min_samples_leaf,
            "features_per_split": forest.config.features_per_split,
            "bootstrap": forest.config.bootstrap,
            "seed": forest.config.seed,
        },
        "n_classes": forest.n_classes,
        "n_features": forest.n_features,
        "trees": [_node_to_dict(t) for t in forest.trees],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def forest_from_text(text: str) -> RandomForest:
    doc = json.loads(text)
    if doc.get("format") != "xmodal-forest-v1":
        raise ValueError(f"not a serialized forest: format={doc.get('format')!r}")
    config = ForestConfig(**doc["config"])
    forest = RandomForest(
        config=config,
        n_classes=int(doc["n_classes"]),
        n_features=int(doc["n_features"]),
        trees=[_node_from_dict(t) for t in doc["trees"]],
    )
    return forest
