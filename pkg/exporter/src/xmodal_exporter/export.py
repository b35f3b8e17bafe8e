"""Convert a pretrained speech encoder into the xmodal container format.

The architecture header is derived from the upstream model's own config
(never hard-coded), and tensors are resolved through a name-mapping table
shipped as a data file, so new model variants only need a new mapping. The
positional convolution's weight-norm parametrization is materialized by
reading the module attribute instead of the raw factors.
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass

import numpy as np

from .container import required_tensor_names, write_checkpoint

_ACTIVATIONS = {"gelu": "gelu-erf", "gelu_new": "gelu-tanh"}
_NORM_MODES = {"group": "group-norm-first-layer", "layer": "layer-norm-every-layer"}


class ExportError(ValueError):
    pass


@dataclass
class ExportManifest:
    """Mapping table plus config extraction rules for one model family."""

    model_family: str
    config_fields: dict
    tensors: dict

    @classmethod
    def load(cls, source) -> "ExportManifest":
        if isinstance(source, dict):
            doc = source
        else:
            with open(source, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        return cls(
            model_family=doc["model_family"],
            config_fields=doc["config_fields"],
            tensors=doc["tensors"],
        )

    @classmethod
    def for_family(cls, family: str) -> "ExportManifest":
        ref = importlib.resources.files("xmodal_exporter.mappings") / f"{family}.json"
        if not ref.is_file():
            raise ExportError(f"no bundled mapping for model family {family!r}")
        return cls.load(json.loads(ref.read_text(encoding="utf-8")))


def detect_family(model) -> str:
    name = type(model).__name__.lower()
    for family in ("hubert", "wav2vec2"):
        if family in name:
            return family
    raise ExportError(
        f"cannot infer model family from {type(model).__name__}; "
        f"pass an explicit mapping"
    )


def derive_config(model, manifest: ExportManifest) -> dict:
    """Container header config read from upstream hyperparameters."""
    src = model.config
    fields = manifest.config_fields

    def pull(key):
        name = fields[key]
        if not hasattr(src, name):
            raise ExportError(f"upstream config has no attribute {name!r}")
        return getattr(src, name)

    channels = list(pull("conv_channels"))
    kernels = list(pull("conv_kernels"))
    strides = list(pull("conv_strides"))
    if not (len(channels) == len(kernels) == len(strides)):
        raise ExportError("upstream conv channel/kernel/stride lists disagree")

    norm_mode = _NORM_MODES.get(pull("norm_mode"))
    if norm_mode is None:
        raise ExportError(f"unsupported feature-extractor norm {pull('norm_mode')!r}")

    activation = _ACTIVATIONS.get(pull("activation"))
    if activation is None:
        raise ExportError(f"unsupported activation {pull('activation')!r}")
    feature_act = _ACTIVATIONS.get(pull("feature_activation"))
    if feature_act != activation:
        raise ExportError(
            f"mixed activations (encoder {pull('activation')!r}, feature extractor "
            f"{pull('feature_activation')!r}) are not representable in the container"
        )

    return {
        "conv_layers": [[int(c), int(k), int(s)]
                        for c, k, s in zip(channels, kernels, strides)],
        "conv_norm_mode": norm_mode,
        "d_model": int(pull("d_model")),
        "n_transformer_layers": int(pull("n_transformer_layers")),
        "n_heads": int(pull("n_heads")),
        "ffn_dim": int(pull("ffn_dim")),
        "pos_conv_kernel": int(pull("pos_conv_kernel")),
        "pos_conv_groups": int(pull("pos_conv_groups")),
        "layernorm_placement": "pre" if pull("stable_layer_norm") else "post",
        "activation": activation,
    }


def _attribute_path(model, path: str):
    node = model
    for part in path.split("."):
        if not hasattr(node, part):
            return None
        node = getattr(node, part)
    return node


def _expand_name(template: str, i=None, layer=None) -> str:
    out = template
    if i is not None:
        out = out.replace("{i}", str(i))
    if layer is not None:
        out = out.replace("{l0}", str(layer - 1)).replace("{l}", str(layer))
    return out


def _mapping_entries(manifest: ExportManifest, config: dict):
    """Expand templates into concrete (container name, entry) pairs."""
    n_conv = len(config["conv_layers"])
    n_layers = config["n_transformer_layers"]
    entries = {}
    for template, entry in manifest.tensors.items():
        if "{i}" in template or "{i}" in entry["path"]:
            for i in range(n_conv):
                entries[_expand_name(template, i=i)] = {
                    **entry, "path": _expand_name(entry["path"], i=i)
                }
        elif "{l}" in template or "{l0}" in entry["path"]:
            for layer in range(1, n_layers + 1):
                entries[_expand_name(template, layer=layer)] = {
                    **entry, "path": _expand_name(entry["path"], layer=layer)
                }
        else:
            entries[template] = dict(entry)
    return entries


def collect_tensors(model, manifest: ExportManifest, config: dict) -> dict:
    entries = _mapping_entries(manifest, config)
    required = required_tensor_names(config)

    unmapped = sorted(set(required) - set(entries))
    if unmapped:
        raise ExportError(f"mapping does not cover required tensors: {unmapped}")

    tensors = {}
    missing = []
    conv_channels = {i: c for i, (c, _, _) in enumerate(config["conv_layers"])}
    for name in required:
        entry = entries[name]
        value = _attribute_path(model, entry["path"])
        if value is None:
            if entry.get("zero_if_missing"):
                i = int(name.split(".")[1])
                tensors[name] = np.zeros(conv_channels[i], dtype=np.float32)
                continue
            missing.append(f"{name} <- {entry['path']}")
            continue
        tensors[name] = value.detach().cpu().numpy().astype(np.float32)
    if missing:
        raise ExportError(f"upstream model lacks mapped tensors: {missing}")
    return tensors


def _validate_shapes(tensors: dict, config: dict) -> None:
    d = config["d_model"]
    checks = {
        "proj.weight": (d, config["conv_layers"][-1][0]),
        "pos_conv.weight": (
            d, d // config["pos_conv_groups"], config["pos_conv_kernel"]
        ),
    }
    for layer in range(1, config["n_transformer_layers"] + 1):
        checks[f"layer.{layer}.attn.q.weight"] = (d, d)
        checks[f"layer.{layer}.ffn.w1.weight"] = (config["ffn_dim"], d)
    prev = 1
    for i, (c, k, _) in enumerate(config["conv_layers"]):
        checks[f"conv.{i}.weight"] = (c, prev, k)
        prev = c
    bad = [
        f"{name}: {tensors[name].shape} != {shape}"
        for name, shape in checks.items()
        if tensors[name].shape != shape
    ]
    if bad:
        raise ExportError("tensor shapes disagree with derived config: " + "; ".join(bad))


def load_upstream(model_ref: str):
    """Instantiate an upstream model from a hub id or local path, eval mode."""
    import torch
    from transformers import AutoModel

    model = AutoModel.from_pretrained(model_ref)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def export(model, manifest: ExportManifest | None = None, output_path=None,
           provenance: str = "") -> dict:
    """Write the container for an upstream model; returns the header config."""
    if isinstance(model, str):
        model = load_upstream(model)
    if manifest is None:
        manifest = ExportManifest.for_family(detect_family(model))
    config = derive_config(model, manifest)
    tensors = collect_tensors(model, manifest, config)
    _validate_shapes(tensors, config)
    if output_path is not None:
        write_checkpoint(output_path, config, tensors, provenance)
    return config
