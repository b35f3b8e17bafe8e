"""Writer for the xmodal container format, version 1.

Implemented directly from the published byte layout (docs/container-format.md
in the consuming toolkit) so this package stays independent of the toolkit's
code: the binary format is the interface. All integers little-endian, all
tensor data little-endian float32, tensors sorted by name and packed
contiguously, metadata as canonical JSON.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"XMTK"
FORMAT_VERSION = 1

KIND_CHECKPOINT = 1
KIND_FIXTURE = 2


def canonical_meta(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, kind: int, meta: dict, tensors: dict) -> None:
    meta_blob = canonical_meta(meta)
    names = sorted(tensors)
    arrays = [np.ascontiguousarray(np.asarray(tensors[n], dtype="<f4")) for n in names]

    directory_size = sum(
        2 + len(n.encode()) + 1 + 1 + 4 * a.ndim + 8 + 8
        for n, a in zip(names, arrays)
    )
    offset = 16 + len(meta_blob) + 4 + directory_size

    parts = [
        MAGIC,
        struct.pack("<III", FORMAT_VERSION, kind, len(meta_blob)),
        meta_blob,
        struct.pack("<I", len(names)),
    ]
    for name, arr in zip(names, arrays):
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", 0, arr.ndim))  # dtype code 0 = float32
        if arr.ndim:
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<QQ", offset, arr.nbytes))
        offset += arr.nbytes
    parts.extend(arr.tobytes() for arr in arrays)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def write_checkpoint(path, config: dict, tensors: dict, provenance: str) -> None:
    write_container(
        path, KIND_CHECKPOINT, {"config": config, "provenance": provenance}, tensors
    )


def write_fixture(path, waveform, references: dict, tolerance: float,
                  producer: str) -> None:
    tensors = {"input": np.asarray(waveform, dtype=np.float32).reshape(1, -1)}
    for tap, ref in references.items():
        tensors[f"layer.{int(tap)}"] = np.asarray(ref, dtype=np.float32)
    meta = {
        "taps": sorted(int(t) for t in references),
        "tolerance": float(tolerance),
        "producer": producer,
    }
    write_container(path, KIND_FIXTURE, meta, tensors)


def required_tensor_names(config: dict):
    """Tensor names the consuming toolkit demands for a given header config."""
    names = []
    conv_layers = config["conv_layers"]
    for i in range(len(conv_layers)):
        names += [f"conv.{i}.weight", f"conv.{i}.bias"]
        if config["conv_norm_mode"] == "layer-norm-every-layer" or i == 0:
            names += [f"conv.{i}.norm.gain", f"conv.{i}.norm.bias"]
    names += ["proj.norm.gain", "proj.norm.bias", "proj.weight", "proj.bias",
              "pos_conv.weight", "pos_conv.bias",
              "encoder.norm.gain", "encoder.norm.bias"]
    for layer in range(1, config["n_transformer_layers"] + 1):
        for proj in ("q", "k", "v", "out"):
            names += [f"layer.{layer}.attn.{proj}.weight",
                      f"layer.{layer}.attn.{proj}.bias"]
        names += [f"layer.{layer}.norm1.gain", f"layer.{layer}.norm1.bias",
                  f"layer.{layer}.norm2.gain", f"layer.{layer}.norm2.bias",
                  f"layer.{layer}.ffn.w1.weight", f"layer.{layer}.ffn.w1.bias",
                  f"layer.{layer}.ffn.w2.weight", f"layer.{layer}.ffn.w2.bias"]
    return names
