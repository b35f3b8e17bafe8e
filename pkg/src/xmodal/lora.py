"""Low-rank adapters on the transformer attention projections.

An adapter adds (alpha / r) * B @ A to a frozen (d_out, d_in) projection.
A starts from a seeded normal with std 0.02 and B from zeros, so freshly
injected adapters change nothing. Training optimizes the adapters jointly
with a probe on the final transformer layer while the base encoder stays
byte-identical (asserted via checksum).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from . import weight_io
from .encoder import EncoderConfig, EncoderWeights, conv_block_input, transformer_forward
from .extract import POOL_MEAN, pool
from .ingest import DatasetManifest, IngestOptions, load_window, prepare_waveforms
from .numkit import GradTape, RawOps, Var, finite_difference_check
from .probe import (
    DegenerateLabelsError,
    DivergenceError,
    ProbeModel,
    TrainConfig,
    _Optimizer,
    init_probe,
    model_from_meta,
    probe_logits,
    probe_meta,
)

TARGET_PROJECTIONS = ("q", "v")
DEFAULT_RANK = 8
DEFAULT_ALPHA = 16.0

_INIT_STD = 0.02


@dataclass
class LoraAdapter:
    layer: int
    projection: str  # "q" | "v"
    A: np.ndarray  # (r, d_in)
    B: np.ndarray  # (d_out, r)
    rank: int
    alpha: float

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def param_count(self) -> int:
        return self.A.size + self.B.size


@dataclass(frozen=True)
class LoraConfig:
    rank: int = DEFAULT_RANK
    alpha: float = DEFAULT_ALPHA
    targets: tuple = TARGET_PROJECTIONS
    layers: tuple = ()  # transformer layer indices; empty means all
    train: TrainConfig = TrainConfig()

    def resolve_layers(self, n_layers: int):
        layers = self.layers or tuple(range(1, n_layers + 1))
        bad = [l for l in layers if l < 1 or l > n_layers]
        if bad:
            raise ValueError(f"adapter layers {bad} outside 1..{n_layers}")
        return tuple(sorted(layers))


def new_adapter(layer: int, projection: str, d_in: int, d_out: int,
                rank: int, alpha: float, rng) -> LoraAdapter:
    if rank < 1 or rank > min(d_in, d_out):
        raise ValueError(f"rank {rank} outside 1..min({d_in}, {d_out})")
    if projection not in ("q", "k", "v", "out"):
        raise ValueError(f"unknown projection {projection!r}")
    return LoraAdapter(
        layer=layer,
        projection=projection,
        A=rng.normal(0.0, _INIT_STD, (rank, d_in)),
        B=np.zeros((d_out, rank)),
        rank=rank,
        alpha=alpha,
    )


def adapted_forward(x, base_w, adapter: LoraAdapter) -> np.ndarray:
    """y = W x + (alpha/r) B (A x) for column vector(s) x."""
    w = np.asarray(base_w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    vec = x.ndim == 1
    xm = x[:, None] if vec else x
    if w.shape[1] != xm.shape[0]:
        raise nk.ShapeError(f"weight {w.shape} does not accept input {x.shape}")
    a = np.asarray(adapter.A, dtype=np.float64)
    b = np.asarray(adapter.B, dtype=np.float64)
    if a.shape[1] != w.shape[1] or b.shape[0] != w.shape[0]:
        raise nk.ShapeError(
            f"adapter shapes A{a.shape} / B{b.shape} do not match weight {w.shape}"
        )
    y = w @ xm + adapter.scaling * (b @ (a @ xm))
    return y[:, 0] if vec else y


def merge(base_w, adapter: LoraAdapter) -> np.ndarray:
    """W' = W + (alpha/r) B A; forward with W' equals adapted_forward."""
    w = np.asarray(base_w, dtype=np.float64)
    a = np.asarray(adapter.A, dtype=np.float64)
    b = np.asarray(adapter.B, dtype=np.float64)
    if a.shape[1] != w.shape[1] or b.shape[0] != w.shape[0] or a.shape[0] != b.shape[1]:
        raise nk.ShapeError(
            f"adapter shapes A{a.shape} / B{b.shape} do not match weight {w.shape}"
        )
    return w + adapter.scaling * (b @ a)


def merge_into_weights(weights: EncoderWeights, adapters) -> EncoderWeights:
    """New EncoderWeights with every adapter folded into its projection."""
    tensors = {name: arr for name, arr in weights.items()}
    for adapter in adapters:
        name = f"layer.{adapter.layer}.attn.{adapter.projection}.weight"
        tensors[name] = merge(tensors[name], adapter).astype(np.float32)
    return EncoderWeights(weights.config, tensors)


def expected_param_count(rank: int, d_in: int, d_out: int) -> int:
    return rank * (d_in + d_out)


# ---------------------------------------------------------------------------
# Joint adapter + probe training
# ---------------------------------------------------------------------------


class _TapeAdapter:
    """Var-backed view of an adapter for tape-mode encoder runs."""

    def __init__(self, adapter: LoraAdapter):
        self.A = Var(adapter.A)
        self.B = Var(adapter.B)
        self.scaling = adapter.scaling


def init_adapters(config: EncoderConfig, lora_config: LoraConfig, seed: int):
    adapters = []
    d = config.d_model
    proj_codes = {"q": 0, "k": 1, "v": 2, "out": 3}
    for layer in lora_config.resolve_layers(config.n_transformer_layers):
        for proj in lora_config.targets:
            rng = np.random.default_rng([seed, layer, proj_codes[proj]])
            adapters.append(
                new_adapter(layer, proj, d, d, lora_config.rank, lora_config.alpha, rng)
            )
    return adapters


def _block_inputs(manifest: DatasetManifest, config, weights, options: IngestOptions):
    """Per-record list of projected conv outputs (one per mono waveform).

    Everything below the first transformer block is adapter-free, so it is
    computed once and reused across training epochs.
    """
    w = weights.as_f64()
    inputs = []
    labels = []
    for index in range(len(manifest.records)):
        window = load_window(manifest, index)
        waveforms = prepare_waveforms(window, options)
        inputs.append(
            [conv_block_input(RawOps, wav[None, :], w, config) for wav in waveforms]
        )
        labels.append(window.label_id)
    return inputs, np.array(labels, dtype=np.int64)


def _embed_with_adapters(ops, per_channel_inputs, w, config, adapter_map, pooling):
    """Pooled final-layer embedding for one record under the given ops backend."""
    tap = config.n_transformer_layers
    parts = []
    for x0 in per_channel_inputs:
        hidden = transformer_forward(ops, x0, w, config, frozenset({tap}), adapter_map)
        parts.append(ops.mean_axis0(hidden[tap]) if pooling == POOL_MEAN
                     else ops.max_axis0(hidden[tap]))
    return ops.concat(parts, axis=-1) if len(parts) > 1 else parts[0]


def train_adapters(
    manifest: DatasetManifest,
    checkpoint_path,
    lora_config: LoraConfig,
    probe_kind: str = "mlp",
    record_indices=None,
    pooling: str = POOL_MEAN,
    hidden_dim: int = 512,
    debug_gradcheck: bool = False,
):
    """Jointly train adapters and a final-layer probe on a windowed task.

    Returns (adapters, ProbeModel, per-epoch loss curve). The base encoder
    is frozen; its checksum is asserted unchanged after training.
    """
    config, weights = weight_io.load_checkpoint(checkpoint_path)
    checksum_before = weights.checksum()
    train_cfg = lora_config.train
    train_cfg.validate()

    options = manifest.options
    inputs, labels = _block_inputs(manifest, config, weights, options)
    if record_indices is not None:
        keep = sorted(int(i) for i in record_indices)
        inputs = [inputs[i] for i in keep]
        labels = labels[keep]
    if np.unique(labels).size < 2:
        raise DegenerateLabelsError(
            f"adapter training needs >= 2 classes, got {np.unique(labels).size}"
        )
    n_classes = len(manifest.labels)
    n_channels = len(inputs[0])
    input_dim = config.d_model * n_channels

    adapters = init_adapters(config, lora_config, train_cfg.seed)
    tape_adapters = [_TapeAdapter(a) for a in adapters]
    adapter_map = {
        (a.layer, a.projection): ta for a, ta in zip(adapters, tape_adapters)
    }
    probe = init_probe(probe_kind, input_dim, n_classes, hidden_dim, train_cfg.seed)
    probe_params = {k: Var(v) for k, v in probe.params.items()}

    params: dict = {}
    for a, ta in zip(adapters, tape_adapters):
        params[f"adapter.{a.layer}.{a.projection}.A"] = ta.A
        params[f"adapter.{a.layer}.{a.projection}.B"] = ta.B
    params.update({f"probe.{k}": v for k, v in probe_params.items()})

    w = weights.as_f64()

    def batch_loss(tape: GradTape, batch):
        rows = [
            _embed_with_adapters(tape, inputs[i], w, config, adapter_map, pooling)
            for i in batch
        ]
        logits = probe_logits(tape, probe_params, tape.stack_rows(rows))
        return tape.cross_entropy(logits, labels[batch])

    if debug_gradcheck:
        _debug_gradcheck(adapters, tape_adapters, probe_params, batch_loss)

    optimizer = _Optimizer(params, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    n = len(inputs)
    curve: list[float] = []
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            tape = GradTape()
            loss = batch_loss(tape, batch)
            grads = tape.gradients(loss, list(params.values()))
            optimizer.step(params, dict(zip(params.keys(), grads)))
            total += float(loss.value) * batch.size
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise DivergenceError(epoch)
        curve.append(epoch_loss)

    for a, ta in zip(adapters, tape_adapters):
        a.A = ta.A.value.copy()
        a.B = ta.B.value.copy()
    probe.params = {k: v.value.copy() for k, v in probe_params.items()}
    probe.epochs_run = len(curve)
    probe.final_loss = curve[-1] if curve else float("nan")

    if weights.checksum() != checksum_before:
        raise RuntimeError("base encoder weights changed during adapter training")
    return adapters, probe, curve


def _debug_gradcheck(adapters, tape_adapters, probe_params, batch_loss):
    """Hard-fails if adapter gradients disagree with finite differences."""
    first = tape_adapters[0]
    batch = np.array([0, 1])

    def op(tape, a_val, b_val):
        first.A = a_val
        first.B = b_val
        return batch_loss(tape, batch)

    saved_a, saved_b = first.A, first.B
    try:
        err = finite_difference_check(op, [saved_a.value, saved_b.value], step=1e-5)
    finally:
        first.A, first.B = saved_a, saved_b
    if err > 1e-4:
        raise nk.NumericInstabilityError(
            f"adapter gradient check failed: max relative error {err:.3e}"
        )


# ---------------------------------------------------------------------------
# Serialization (adapters + probe in one container)
# ---------------------------------------------------------------------------


def save_bundle(path, adapters, probe: ProbeModel, train_cfg: TrainConfig) -> None:
    if not adapters:
        raise ValueError("bundle requires at least one adapter")
    meta = {
        "rank": adapters[0].rank,
        "alpha": adapters[0].alpha,
        "adapters": [{"layer": a.layer, "proj": a.projection} for a in adapters],
        "probe": probe_meta(probe, has_scaler=False),
        "train": train_cfg.to_json_dict(),
    }
    tensors = {}
    for a in adapters:
        tensors[f"adapter.{a.layer}.{a.projection}.A"] = a.A
        tensors[f"adapter.{a.layer}.{a.projection}.B"] = a.B
    for k, v in probe.params.items():
        tensors[f"probe.{k}"] = v
    weight_io.write_container(path, weight_io.KIND_LORA_BUNDLE, meta, tensors)


def load_bundle(path):
    """Returns (adapters, ProbeModel, TrainConfig)."""
    _, meta, tensors = weight_io.read_container(
        path, expect_kind=weight_io.KIND_LORA_BUNDLE
    )
    adapters = []
    for entry in meta["adapters"]:
        layer, proj = int(entry["layer"]), str(entry["proj"])
        adapters.append(
            LoraAdapter(
                layer=layer,
                projection=proj,
                A=tensors[f"adapter.{layer}.{proj}.A"].astype(np.float64),
                B=tensors[f"adapter.{layer}.{proj}.B"].astype(np.float64),
                rank=int(meta["rank"]),
                alpha=float(meta["alpha"]),
            )
        )
    probe = model_from_meta(meta["probe"], tensors, prefix="probe.")
    train_raw = dict(meta["train"])
    train_cfg = TrainConfig(**train_raw)
    return adapters, probe, train_cfg
