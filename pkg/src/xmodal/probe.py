"""Linear and MLP classification heads with a deterministic trainer.

Probes minimize mean softmax cross-entropy with Adam (or plain SGD) over
seeded mini-batches. Given the same seed and data, training is bit-exact
reproducible. The MLP probe is a single GELU hidden layer of width 512 by
default.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from .numkit import GradTape, RawOps, Var

KIND_LINEAR = "linear"
KIND_MLP = "mlp"

DEFAULT_HIDDEN_DIM = 512


class DegenerateLabelsError(ValueError):
    """Training set presents fewer than two classes."""


class DivergenceError(ArithmeticError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    weight_decay: float = 1e-5
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int | None = None  # early stop on validation loss
    class_weighting: bool = False

    def validate(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate/batch_size/epochs out of range")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_json_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "weight_decay": self.weight_decay,
            "optimizer": self.optimizer,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "patience": self.patience,
            "class_weighting": self.class_weighting,
        }


@dataclass
class ProbeModel:
    kind: str
    input_dim: int
    n_classes: int
    hidden_dim: int
    params: dict  # name -> float64 ndarray
    seed: int = 0
    epochs_run: int = 0
    final_loss: float = float("nan")

    def param_names(self):
        return sorted(self.params)


def init_probe(kind: str, input_dim: int, n_classes: int,
               hidden_dim: int = DEFAULT_HIDDEN_DIM, seed: int = 0) -> ProbeModel:
    rng = np.random.default_rng(seed)
    if kind == KIND_LINEAR:
        params = {
            "w": rng.normal(0.0, 0.02, (n_classes, input_dim)),
            "b": np.zeros(n_classes),
        }
    elif kind == KIND_MLP:
        params = {
            "w1": rng.normal(0.0, 0.02, (hidden_dim, input_dim)),
            "b1": np.zeros(hidden_dim),
            "w2": rng.normal(0.0, 0.02, (n_classes, hidden_dim)),
            "b2": np.zeros(n_classes),
        }
    else:
        raise ValueError(f"unknown probe kind {kind!r}")
    return ProbeModel(
        kind=kind,
        input_dim=input_dim,
        n_classes=n_classes,
        hidden_dim=hidden_dim if kind == KIND_MLP else 0,
        params=params,
        seed=seed,
    )


def probe_logits(ops, params, x):
    """Forward pass shared by training (tape) and inference (raw)."""
    if "w1" in params:
        h = ops.gelu(ops.add(ops.matmul(x, ops.transpose(params["w1"])), params["b1"]))
        return ops.add(ops.matmul(h, ops.transpose(params["w2"])), params["b2"])
    return ops.add(ops.matmul(x, ops.transpose(params["w"])), params["b"])


def predict(model: ProbeModel, embedding) -> np.ndarray:
    """Class probability vector for a single embedding."""
    x = np.asarray(embedding, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise nk.ShapeError(
            f"embedding has shape {x.shape}, probe expects ({model.input_dim},)"
        )
    logits = probe_logits(RawOps, model.params, x[None, :])
    return nk.softmax(logits)[0]


def predict_batch(model: ProbeModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise nk.ShapeError(
            f"batch has shape {x.shape}, probe expects (N, {model.input_dim})"
        )
    return nk.softmax(probe_logits(RawOps, model.params, x))


def inverse_frequency_weights(y, n_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(y, dtype=np.int64), minlength=n_classes)
    weights = np.zeros(n_classes)
    present = counts > 0
    weights[present] = counts.sum() / (present.sum() * counts[present])
    return weights


class _Optimizer:
    """Adam (classic L2 coupling) or SGD over a named parameter set."""

    def __init__(self, params: dict, config: TrainConfig):
        self.config = config
        self.step_count = 0
        self.m = {k: np.zeros_like(v.value) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.value) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        c = self.config
        self.step_count += 1
        for name, var in params.items():
            g = grads[name]
            if c.weight_decay:
                g = g + c.weight_decay * var.value
            if c.optimizer == "sgd":
                var.value = var.value - c.learning_rate * g
                continue
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            mhat = self.m[name] / (1 - c.beta1**self.step_count)
            vhat = self.v[name] / (1 - c.beta2**self.step_count)
            var.value = var.value - c.learning_rate * mhat / (np.sqrt(vhat) + c.adam_eps)


def train_probe(
    embeddings,
    labels,
    config: TrainConfig,
    kind: str = KIND_LINEAR,
    n_classes: int | None = None,
    hidden_dim: int = DEFAULT_HIDDEN_DIM,
    validation=None,
):
    """Train a probe on (N, D) embeddings; returns (ProbeModel, loss curve).

    The per-epoch shuffle order is drawn from a generator seeded by
    ``config.seed``, so identical inputs give bit-identical models. With
    ``epochs == 0`` the initialized model and an empty curve come back.
    """
    config.validate()
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise nk.ShapeError(
            f"expected (N, D) embeddings with (N,) labels, got {x.shape} and {y.shape}"
        )
    present = np.unique(y)
    if present.size < 2:
        raise DegenerateLabelsError(
            f"training labels contain {present.size} distinct class(es); need >= 2"
        )
    if n_classes is None:
        n_classes = int(y.max()) + 1

    model = init_probe(kind, x.shape[1], n_classes, hidden_dim, config.seed)
    params = {k: Var(v) for k, v in model.params.items()}
    class_weights = (
        inverse_frequency_weights(y, n_classes) if config.class_weighting else None
    )

    optimizer = _Optimizer(params, config)
    rng = np.random.default_rng(config.seed)
    n = x.shape[0]
    curve: list[float] = []
    best_val = np.inf
    best_params = None
    stale = 0
    epochs_run = 0

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            tape = GradTape()
            logits = probe_logits(tape, params, x[batch])
            loss = tape.cross_entropy(logits, y[batch], class_weights)
            grads = tape.gradients(loss, list(params.values()))
            optimizer.step(params, dict(zip(params.keys(), grads)))
            total += float(loss.value) * batch.size
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise DivergenceError(epoch)
        curve.append(epoch_loss)
        epochs_run = epoch + 1
        if validation is not None and config.patience is not None:
            val_x, val_y = validation
            val_loss = nk.cross_entropy(
                probe_logits(RawOps, {k: v.value for k, v in params.items()},
                             np.asarray(val_x, dtype=np.float64)),
                val_y,
                class_weights,
            )
            if val_loss < best_val:
                best_val = val_loss
                best_params = {k: v.value.copy() for k, v in params.items()}
                stale = 0
            else:
                stale += 1
                if stale > config.patience:
                    break

    final = best_params if best_params is not None else {
        k: v.value.copy() for k, v in params.items()
    }
    model.params = final
    model.epochs_run = epochs_run
    model.final_loss = curve[-1] if curve else float("nan")
    return model, curve


@dataclass
class EmbeddingScaler:
    """Per-dimension z-score fit on training-fold statistics only."""

    mean: np.ndarray
    std: np.ndarray
    provenance: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, x, provenance: dict | None = None) -> "EmbeddingScaler":
        x = np.asarray(x, dtype=np.float64)
        std = np.sqrt(x.var(axis=0))
        std[std < 1e-8] = 1.0
        return cls(mean=x.mean(axis=0), std=std, provenance=dict(provenance or {}))

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def indices_digest(indices) -> str:
    """Stable fingerprint of a sorted index set, used in scaler provenance."""
    payload = ",".join(str(int(i)) for i in sorted(indices)).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def probe_meta(model: ProbeModel, has_scaler: bool) -> dict:
    return {
        "kind": model.kind,
        "input_dim": model.input_dim,
        "n_classes": model.n_classes,
        "hidden_dim": model.hidden_dim,
        "seed": model.seed,
        "epochs": model.epochs_run,
        "final_loss": model.final_loss,
        "has_scaler": has_scaler,
    }


def model_from_meta(meta: dict, tensors: dict, prefix: str = "") -> ProbeModel:
    names = ("w1", "b1", "w2", "b2") if meta["kind"] == KIND_MLP else ("w", "b")
    params = {n: tensors[f"{prefix}{n}"].astype(np.float64) for n in names}
    return ProbeModel(
        kind=str(meta["kind"]),
        input_dim=int(meta["input_dim"]),
        n_classes=int(meta["n_classes"]),
        hidden_dim=int(meta["hidden_dim"]),
        params=params,
        seed=int(meta["seed"]),
        epochs_run=int(meta["epochs"]),
        final_loss=float(meta["final_loss"]),
    )


def save_probe(model: ProbeModel, path, scaler: EmbeddingScaler | None = None) -> None:
    from . import weight_io

    tensors = dict(model.params)
    if scaler is not None:
        tensors["scaler.mean"] = scaler.mean
        tensors["scaler.std"] = scaler.std
    weight_io.write_container(
        path, weight_io.KIND_PROBE, probe_meta(model, scaler is not None), tensors
    )


def load_probe(path):
    """Returns (ProbeModel, EmbeddingScaler | None)."""
    from . import weight_io

    _, meta, tensors = weight_io.read_container(path, expect_kind=weight_io.KIND_PROBE)
    model = model_from_meta(meta, tensors)
    scaler = None
    if meta["has_scaler"]:
        scaler = EmbeddingScaler(
            mean=tensors["scaler.mean"].astype(np.float64),
            std=tensors["scaler.std"].astype(np.float64),
        )
    return model, scaler
