"""Frozen conv + transformer encoder with per-layer tap points.

The encoder is a stack of strided 1-D convolutions (the feature extractor)
followed by a projection to the model width and a bidirectional transformer.
Layer 0 of :class:`HiddenStates` is the projected conv output; layers 1..L
are the transformer block outputs. The forward pass is written against an
ops backend so the exact same code runs tape-free for extraction and on a
:class:`~xmodal.numkit.GradTape` for adapter training.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import numkit as nk
from .numkit import LN_EPS, RawOps

CONV_NORM_GROUP_FIRST = "group-norm-first-layer"
CONV_NORM_LAYER_EVERY = "layer-norm-every-layer"
PLACEMENT_PRE = "pre"
PLACEMENT_POST = "post"
ACT_GELU_TANH = "gelu-tanh"
ACT_GELU_ERF = "gelu-erf"

# Base-size public architecture; real values always come from the checkpoint
# header, this is only the default for toys and tests.
DEFAULT_CONV_LAYERS = (
    (512, 10, 5),
    (512, 3, 2),
    (512, 3, 2),
    (512, 3, 2),
    (512, 3, 2),
    (512, 2, 2),
    (512, 2, 2),
)


class ConfigError(ValueError):
    """Encoder configuration violates a structural invariant."""


class MissingWeightError(KeyError):
    """A tensor required by the configuration is absent."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"missing weight tensor {self.name!r}"


class EncodeInputError(ValueError):
    """Waveform too short to produce a single frame."""

    def __init__(self, length: int, minimum: int):
        super().__init__(
            f"waveform of {length} samples is too short; "
            f"minimum usable length is {minimum} samples"
        )
        self.length = length
        self.minimum = minimum


@dataclass(frozen=True)
class EncoderConfig:
    conv_layers: tuple = DEFAULT_CONV_LAYERS
    conv_norm_mode: str = CONV_NORM_GROUP_FIRST
    d_model: int = 768
    n_transformer_layers: int = 12
    n_heads: int = 12
    ffn_dim: int = 3072
    pos_conv_kernel: int = 128
    pos_conv_groups: int = 16
    layernorm_placement: str = PLACEMENT_POST
    activation: str = ACT_GELU_TANH

    def __post_init__(self):
        object.__setattr__(
            self, "conv_layers", tuple(tuple(int(v) for v in l) for l in self.conv_layers)
        )
        self.validate()

    def validate(self):
        if not self.conv_layers:
            raise ConfigError("conv_layers must be non-empty")
        for i, layer in enumerate(self.conv_layers):
            if len(layer) != 3 or any(v < 1 for v in layer):
                raise ConfigError(f"conv layer {i} must be (channels, kernel, stride) of positive ints")
        for name in ("d_model", "n_transformer_layers", "n_heads", "ffn_dim",
                     "pos_conv_kernel", "pos_conv_groups"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.d_model % self.pos_conv_groups != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by pos_conv_groups={self.pos_conv_groups}"
            )
        if self.conv_norm_mode not in (CONV_NORM_GROUP_FIRST, CONV_NORM_LAYER_EVERY):
            raise ConfigError(f"unknown conv_norm_mode {self.conv_norm_mode!r}")
        if self.layernorm_placement not in (PLACEMENT_PRE, PLACEMENT_POST):
            raise ConfigError(f"unknown layernorm_placement {self.layernorm_placement!r}")
        if self.activation not in (ACT_GELU_TANH, ACT_GELU_ERF):
            raise ConfigError(f"unknown activation {self.activation!r}")

    def to_json_dict(self) -> dict:
        return {
            "conv_layers": [list(l) for l in self.conv_layers],
            "conv_norm_mode": self.conv_norm_mode,
            "d_model": self.d_model,
            "n_transformer_layers": self.n_transformer_layers,
            "n_heads": self.n_heads,
            "ffn_dim": self.ffn_dim,
            "pos_conv_kernel": self.pos_conv_kernel,
            "pos_conv_groups": self.pos_conv_groups,
            "layernorm_placement": self.layernorm_placement,
            "activation": self.activation,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EncoderConfig":
        expected = set(cls().to_json_dict())
        unknown = set(d) - expected
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        missing = expected - set(d)
        if missing:
            raise ConfigError(f"missing config fields: {sorted(missing)}")
        return cls(**{k: tuple(map(tuple, v)) if k == "conv_layers" else v for k, v in d.items()})


def base_config() -> EncoderConfig:
    return EncoderConfig()


def frame_count(input_length: int, conv_layers) -> int:
    """Output frames after folding floor((L-K)/s)+1 across conv layers; 0 if too short."""
    if input_length < 1:
        raise ValueError(f"input_length must be >= 1, got {input_length}")
    length = int(input_length)
    for _, kernel, stride in conv_layers:
        if length < kernel:
            return 0
        length = (length - kernel) // stride + 1
    return length


def min_input_length(conv_layers) -> int:
    """Smallest L with frame_count(L) >= 1 (exact inverse of the length fold)."""
    needed = 1
    for _, kernel, stride in reversed(list(conv_layers)):
        needed = (needed - 1) * stride + kernel
    return needed


def required_tensor_shapes(config: EncoderConfig) -> dict:
    """Exact name -> shape map the config demands of a weight set."""
    shapes: dict = {}
    prev = 1
    for i, (channels, kernel, _) in enumerate(config.conv_layers):
        shapes[f"conv.{i}.weight"] = (channels, prev, kernel)
        shapes[f"conv.{i}.bias"] = (channels,)
        if config.conv_norm_mode == CONV_NORM_LAYER_EVERY or i == 0:
            shapes[f"conv.{i}.norm.gain"] = (channels,)
            shapes[f"conv.{i}.norm.bias"] = (channels,)
        prev = channels
    d = config.d_model
    shapes["proj.norm.gain"] = (prev,)
    shapes["proj.norm.bias"] = (prev,)
    shapes["proj.weight"] = (d, prev)
    shapes["proj.bias"] = (d,)
    shapes["pos_conv.weight"] = (d, d // config.pos_conv_groups, config.pos_conv_kernel)
    shapes["pos_conv.bias"] = (d,)
    shapes["encoder.norm.gain"] = (d,)
    shapes["encoder.norm.bias"] = (d,)
    for i in range(1, config.n_transformer_layers + 1):
        for proj in ("q", "k", "v", "out"):
            shapes[f"layer.{i}.attn.{proj}.weight"] = (d, d)
            shapes[f"layer.{i}.attn.{proj}.bias"] = (d,)
        shapes[f"layer.{i}.norm1.gain"] = (d,)
        shapes[f"layer.{i}.norm1.bias"] = (d,)
        shapes[f"layer.{i}.norm2.gain"] = (d,)
        shapes[f"layer.{i}.norm2.bias"] = (d,)
        shapes[f"layer.{i}.ffn.w1.weight"] = (config.ffn_dim, d)
        shapes[f"layer.{i}.ffn.w1.bias"] = (config.ffn_dim,)
        shapes[f"layer.{i}.ffn.w2.weight"] = (d, config.ffn_dim)
        shapes[f"layer.{i}.ffn.w2.bias"] = (d,)
    return shapes


class EncoderWeights:
    """Immutable float32 tensor map validated against an :class:`EncoderConfig`."""

    def __init__(self, config: EncoderConfig, tensors: Mapping[str, np.ndarray]):
        expected = required_tensor_shapes(config)
        missing = sorted(set(expected) - set(tensors))
        if missing:
            raise MissingWeightError(missing[0])
        extra = sorted(set(tensors) - set(expected))
        if extra:
            raise ConfigError(f"unexpected weight tensors: {extra}")
        store = {}
        for name, shape in expected.items():
            arr = np.asarray(tensors[name], dtype=np.float32)
            if arr.shape != shape:
                raise ConfigError(
                    f"tensor {name!r} has shape {arr.shape}, expected {shape}"
                )
            if not np.isfinite(arr).all():
                raise ConfigError(f"tensor {name!r} contains non-finite values")
            arr = arr.copy()
            arr.flags.writeable = False
            store[name] = arr
        self.config = config
        self._tensors = store
        self._f64: dict | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise MissingWeightError(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self):
        return sorted(self._tensors)

    def items(self):
        return self._tensors.items()

    def as_f64(self) -> dict:
        if self._f64 is None:
            self._f64 = {k: v.astype(np.float64) for k, v in self._tensors.items()}
        return self._f64

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in self.names():
            h.update(name.encode())
            h.update(self._tensors[name].tobytes())
        return h.hexdigest()


def random_weights(config: EncoderConfig, seed: int = 0) -> EncoderWeights:
    """Seeded random initialization for toy encoders (tests, demos)."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in required_tensor_shapes(config).items():
        if name.endswith(".gain"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            tensors[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape).astype(
                np.float32
            )
    return EncoderWeights(config, tensors)


@dataclass
class HiddenStates:
    """Tapped layer outputs: index -> (T, d_model) array."""

    layers: dict = field(default_factory=dict)
    n_frames: int = 0
    d_model: int = 0

    def __contains__(self, layer: int) -> bool:
        return layer in self.layers

    def __getitem__(self, layer: int) -> np.ndarray:
        return self.layers[layer]

    def indices(self):
        return sorted(self.layers)


# ---------------------------------------------------------------------------
# Forward pass (backend-parameterized)
# ---------------------------------------------------------------------------


def _activation_op(ops, config: EncoderConfig):
    return ops.gelu if config.activation == ACT_GELU_TANH else ops.gelu_erf


def _feature_frames(ops, waveform, w, config: EncoderConfig):
    act = _activation_op(ops, config)
    x = waveform
    for i, (_, _, stride) in enumerate(config.conv_layers):
        x = ops.conv1d(x, w[f"conv.{i}.weight"], stride=stride, groups=1)
        x = ops.add(x, w[f"conv.{i}.bias"][:, None])
        if config.conv_norm_mode == CONV_NORM_GROUP_FIRST:
            if i == 0:
                x = ops.channel_norm(x, w["conv.0.norm.gain"], w["conv.0.norm.bias"], LN_EPS)
        else:
            xt = ops.transpose(x)
            xt = ops.layer_norm(xt, w[f"conv.{i}.norm.gain"], w[f"conv.{i}.norm.bias"], LN_EPS)
            x = ops.transpose(xt)
        x = act(x)
    return x  # (C_last, T)


def _project(ops, frames, w):
    x = ops.transpose(frames)  # (T, C)
    x = ops.layer_norm(x, w["proj.norm.gain"], w["proj.norm.bias"], LN_EPS)
    return ops.add(ops.matmul(x, w["proj.weight"].T), w["proj.bias"])


def _positional_stage(ops, x, w, config: EncoderConfig):
    """Add the grouped-conv positional embedding (same padding, right trim)."""
    k = config.pos_conv_kernel
    t = nk.value_of(x).shape[0]
    xt = ops.transpose(x)  # (d, T)
    xt = ops.pad_last(xt, k // 2, k // 2)
    y = ops.conv1d(xt, w["pos_conv.weight"], stride=1, groups=config.pos_conv_groups)
    y = ops.add(y, w["pos_conv.bias"][:, None])
    if k % 2 == 0:
        y = ops.slice_last(y, 0, t)
    y = _activation_op(ops, config)(ops.transpose(y))
    return ops.add(x, y)


def _projection_with_adapter(ops, x, w, name, adapter):
    y = ops.add(ops.matmul(x, w[f"{name}.weight"].T), w[f"{name}.bias"])
    if adapter is not None:
        delta = ops.matmul(ops.matmul(x, ops.transpose(adapter.A)), ops.transpose(adapter.B))
        y = ops.add(y, ops.scale(delta, adapter.scaling))
    return y


def _attention(ops, x, w, prefix, n_heads: int, adapters, layer_idx: int):
    d = nk.value_of(x).shape[-1]
    head_dim = d // n_heads
    inv_scale = 1.0 / np.sqrt(head_dim)
    q = _projection_with_adapter(ops, x, w, f"{prefix}.attn.q", adapters.get((layer_idx, "q")))
    k = _projection_with_adapter(ops, x, w, f"{prefix}.attn.k", adapters.get((layer_idx, "k")))
    v = _projection_with_adapter(ops, x, w, f"{prefix}.attn.v", adapters.get((layer_idx, "v")))
    heads = []
    for h in range(n_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = ops.slice_last(q, lo, hi)
        kh = ops.slice_last(k, lo, hi)
        vh = ops.slice_last(v, lo, hi)
        scores = ops.scale(ops.matmul(qh, ops.transpose(kh)), inv_scale)
        heads.append(ops.matmul(ops.softmax(scores), vh))
    ctx = ops.concat(heads, axis=-1) if n_heads > 1 else heads[0]
    return ops.add(ops.matmul(ctx, w[f"{prefix}.attn.out.weight"].T), w[f"{prefix}.attn.out.bias"])


def _ffn(ops, x, w, prefix, config: EncoderConfig):
    act = _activation_op(ops, config)
    h = act(ops.add(ops.matmul(x, w[f"{prefix}.ffn.w1.weight"].T), w[f"{prefix}.ffn.w1.bias"]))
    return ops.add(ops.matmul(h, w[f"{prefix}.ffn.w2.weight"].T), w[f"{prefix}.ffn.w2.bias"])


def _transformer_block(ops, x, w, layer_idx: int, config: EncoderConfig, adapters):
    prefix = f"layer.{layer_idx}"
    if config.layernorm_placement == PLACEMENT_PRE:
        attn_in = ops.layer_norm(x, w[f"{prefix}.norm1.gain"], w[f"{prefix}.norm1.bias"], LN_EPS)
        h = ops.add(x, _attention(ops, attn_in, w, prefix, config.n_heads, adapters, layer_idx))
        ffn_in = ops.layer_norm(h, w[f"{prefix}.norm2.gain"], w[f"{prefix}.norm2.bias"], LN_EPS)
        return ops.add(h, _ffn(ops, ffn_in, w, prefix, config))
    h = ops.add(x, _attention(ops, x, w, prefix, config.n_heads, adapters, layer_idx))
    h = ops.layer_norm(h, w[f"{prefix}.norm1.gain"], w[f"{prefix}.norm1.bias"], LN_EPS)
    h = ops.add(h, _ffn(ops, h, w, prefix, config))
    return ops.layer_norm(h, w[f"{prefix}.norm2.gain"], w[f"{prefix}.norm2.bias"], LN_EPS)


def transformer_forward(ops, x, w, config: EncoderConfig, taps, adapters) -> dict:
    """Run blocks 1..max(taps) from the projected conv output ``x``.

    In pre-norm placement the encoder-level norm is applied to the final
    block's tap (matching the convention that the last hidden state is the
    normalized one); in post-norm placement it is applied once before the
    first block, right after the positional embedding.
    """
    out: dict = {}
    if 0 in taps:
        out[0] = x
    max_tap = max(taps, default=0)
    if max_tap < 1:
        return out
    x = _positional_stage(ops, x, w, config)
    if config.layernorm_placement == PLACEMENT_POST:
        x = ops.layer_norm(x, w["encoder.norm.gain"], w["encoder.norm.bias"], LN_EPS)
    for i in range(1, max_tap + 1):
        x = _transformer_block(ops, x, w, i, config, adapters)
        if i in taps:
            if (
                config.layernorm_placement == PLACEMENT_PRE
                and i == config.n_transformer_layers
            ):
                out[i] = ops.layer_norm(
                    x, w["encoder.norm.gain"], w["encoder.norm.bias"], LN_EPS
                )
            else:
                out[i] = x
    return out


def conv_block_input(ops, waveform, w, config: EncoderConfig):
    """Projected conv-extractor output (layer 0) for a (1, L) waveform."""
    return _project(ops, _feature_frames(ops, waveform, w, config), w)


def encode(waveform, weights: EncoderWeights, config: EncoderConfig | None = None,
           taps=(0,), adapters: Mapping | None = None) -> HiddenStates:
    """Encode one waveform, returning hidden states at the requested taps.

    ``adapters`` maps (layer index, projection name) to low-rank adapters;
    base weights are never mutated.
    """
    config = config or weights.config
    wav = np.asarray(waveform, dtype=np.float64)
    if wav.ndim == 1:
        wav = wav[None, :]
    if wav.ndim != 2 or wav.shape[0] != 1:
        raise nk.ShapeError(f"encode expects a (1, L) waveform, got {wav.shape}")
    taps = frozenset(int(t) for t in taps)
    if any(t < 0 or t > config.n_transformer_layers for t in taps):
        raise ValueError(
            f"taps {sorted(taps)} outside 0..{config.n_transformer_layers}"
        )
    frames = frame_count(wav.shape[1], config.conv_layers)
    if frames < 1:
        raise EncodeInputError(wav.shape[1], min_input_length(config.conv_layers))
    if not taps:
        return HiddenStates(layers={}, n_frames=frames, d_model=config.d_model)
    w = weights.as_f64()
    x0 = conv_block_input(RawOps, wav, w, config)
    layers = transformer_forward(RawOps, x0, w, config, taps, dict(adapters or {}))
    return HiddenStates(layers=layers, n_frames=frames, d_model=config.d_model)


def attention(x, layer_weights: Mapping[str, np.ndarray], n_heads: int) -> np.ndarray:
    """Standalone multi-head self-attention on a (T, d) input.

    ``layer_weights`` carries "q.weight", "q.bias", ..., "out.weight",
    "out.bias" tensors with (d_out, d_in) weight convention.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if d % n_heads != 0:
        raise nk.ShapeError(f"d={d} not divisible by n_heads={n_heads}")
    w = {f"layer.0.attn.{k}": np.asarray(v, dtype=np.float64) for k, v in layer_weights.items()}
    return _attention(RawOps, x, w, "layer.0", n_heads, {}, 0)
