"""Bit-exact binary container for encoder checkpoints and related artifacts.

One format hosts five payload kinds: encoder checkpoints, parity fixtures,
embedding caches, probe models, and adapter bundles. Layout (all integers
little-endian, all tensor data little-endian float32, version 1 frozen,
unknown fields rejected):

    [0:4)    magic b"XMTK"
    [4:8)    u32 format version (= 1)
    [8:12)   u32 payload kind
    [12:16)  u32 meta length in bytes
    [16:..)  canonical JSON metadata (UTF-8, sorted keys, no whitespace)
    u32      tensor count
    per tensor, sorted by name:
        u16 name length, name bytes (UTF-8)
        u8  dtype code (0 = float32)
        u8  ndim
        ndim x u32 dims
        u64 absolute byte offset of the data
        u64 byte length of the data
    data region: tensors packed contiguously in directory order, row-major

The full layout is documented in docs/container-format.md; a hex dump of a
toy checkpoint is committed as a golden file so any byte-level drift fails
tests.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .encoder import (
    EncoderConfig,
    EncoderWeights,
    EncodeInputError,
    MissingWeightError,
    encode,
    frame_count,
    required_tensor_shapes,
)

MAGIC = b"XMTK"
FORMAT_VERSION = 1

KIND_CHECKPOINT = 1
KIND_FIXTURE = 2
KIND_EMBEDDING_CACHE = 3
KIND_PROBE = 4
KIND_LORA_BUNDLE = 5

_KIND_NAMES = {
    KIND_CHECKPOINT: "checkpoint",
    KIND_FIXTURE: "fixture",
    KIND_EMBEDDING_CACHE: "embedding-cache",
    KIND_PROBE: "probe",
    KIND_LORA_BUNDLE: "lora-bundle",
}

_DTYPE_F32 = 0

_META_KEYS = {
    KIND_CHECKPOINT: {"config", "provenance"},
    KIND_FIXTURE: {"taps", "tolerance", "producer"},
    KIND_EMBEDDING_CACHE: {
        "dataset",
        "manifest_sha256",
        "checkpoint_sha256",
        "pooling",
        "channel_strategy",
        "upsample",
        "standardize",
        "layers",
        "records",
        "vector_length",
    },
    KIND_PROBE: {"kind", "input_dim", "n_classes", "hidden_dim", "seed", "epochs",
                 "final_loss", "has_scaler"},
    KIND_LORA_BUNDLE: {"rank", "alpha", "adapters", "probe", "train"},
}


class FormatError(ValueError):
    """File is not a container of the expected kind/version."""


class CorruptCheckpointError(ValueError):
    """Container framing or directory is internally inconsistent."""


class FixtureIncompatibleError(ValueError):
    """Parity fixture does not match the checkpoint's geometry."""


def canonical_meta(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, kind: int, meta: dict, tensors: dict) -> None:
    """Serialize; byte output is deterministic for identical inputs."""
    if kind not in _META_KEYS:
        raise FormatError(f"unknown container kind {kind}")
    if set(meta) != _META_KEYS[kind]:
        raise FormatError(
            f"{_KIND_NAMES[kind]} metadata keys {sorted(meta)} != "
            f"required {sorted(_META_KEYS[kind])}"
        )
    meta_blob = canonical_meta(meta)
    names = sorted(tensors)
    arrays = []
    for name in names:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        arrays.append(arr)

    directory_size = 0
    for name, arr in zip(names, arrays):
        directory_size += 2 + len(name.encode()) + 1 + 1 + 4 * arr.ndim + 8 + 8
    data_start = 16 + len(meta_blob) + 4 + directory_size

    parts = [MAGIC, struct.pack("<III", FORMAT_VERSION, kind, len(meta_blob)), meta_blob,
             struct.pack("<I", len(names))]
    offset = data_start
    for name, arr in zip(names, arrays):
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", _DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(struct.pack("<QQ", offset, arr.nbytes))
        offset += arr.nbytes
    for arr in arrays:
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpointError(
                f"truncated container: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path, expect_kind: int | None = None):
    """Parse a container; returns (kind, meta, tensors)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic bytes, not a container file")
    version, kind, meta_len = r.unpack("<III")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if kind not in _KIND_NAMES:
        raise FormatError(f"{path}: unknown payload kind {kind}")
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(
            f"{path}: is a {_KIND_NAMES[kind]} container, "
            f"expected {_KIND_NAMES[expect_kind]}"
        )
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable metadata: {exc}") from None
    if set(meta) != _META_KEYS[kind]:
        raise FormatError(
            f"{path}: metadata keys {sorted(meta)} != required {sorted(_META_KEYS[kind])}"
        )
    (n_tensors,) = r.unpack("<I")
    entries = []
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        dtype_code, ndim = r.unpack("<BB")
        if dtype_code != _DTYPE_F32:
            raise CorruptCheckpointError(f"{path}: tensor {name!r} has unknown dtype code {dtype_code}")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        offset, nbytes = r.unpack("<QQ")
        expected_nbytes = 4 * int(np.prod(dims, dtype=np.int64)) if ndim else 4
        if nbytes != expected_nbytes:
            raise CorruptCheckpointError(
                f"{path}: tensor {name!r} declares {nbytes} bytes for shape {dims}"
            )
        entries.append((name, dims, offset, nbytes))
    # Directory invariants: in-bounds, non-overlapping, exactly packed.
    cursor = r.pos
    for name, dims, offset, nbytes in entries:
        if offset != cursor:
            raise CorruptCheckpointError(
                f"{path}: tensor {name!r} offset {offset} breaks contiguous packing "
                f"(expected {cursor})"
            )
        cursor = offset + nbytes
    if cursor != len(blob):
        raise CorruptCheckpointError(
            f"{path}: data region ends at {cursor}, file has {len(blob)} bytes"
        )
    tensors = {}
    for name, dims, offset, nbytes in entries:
        if name in tensors:
            raise CorruptCheckpointError(f"{path}: duplicate tensor name {name!r}")
        flat = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset)
        arr = flat.reshape(dims).copy()
        arr.flags.writeable = False
        tensors[name] = arr
    return kind, meta, tensors


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(config: EncoderConfig, weights: EncoderWeights, path,
                    provenance: str = "") -> None:
    expected = required_tensor_shapes(config)
    for name in expected:
        if name not in weights:
            raise MissingWeightError(name)
    meta = {"config": config.to_json_dict(), "provenance": provenance}
    write_container(path, KIND_CHECKPOINT, meta, dict(weights.items()))


def load_checkpoint(path):
    """Load and validate; returns (EncoderConfig, EncoderWeights)."""
    _, meta, tensors = read_container(path, expect_kind=KIND_CHECKPOINT)
    config = EncoderConfig.from_json_dict(meta["config"])
    try:
        weights = EncoderWeights(config, tensors)
    except MissingWeightError as exc:
        raise CorruptCheckpointError(
            f"{path}: checkpoint missing tensor {exc.name!r}"
        ) from None
    return config, weights


# ---------------------------------------------------------------------------
# Parity fixtures
# ---------------------------------------------------------------------------


@dataclass
class ParityFixture:
    waveform: np.ndarray  # (1, L) float32
    references: dict  # layer index -> (T, d) float32
    tolerance: float
    producer: str

    @property
    def taps(self):
        return sorted(self.references)


def save_fixture(path, fixture: ParityFixture) -> None:
    meta = {
        "taps": fixture.taps,
        "tolerance": float(fixture.tolerance),
        "producer": fixture.producer,
    }
    tensors = {"input": np.asarray(fixture.waveform, dtype=np.float32).reshape(1, -1)}
    for layer, ref in fixture.references.items():
        tensors[f"layer.{int(layer)}"] = np.asarray(ref, dtype=np.float32)
    write_container(path, KIND_FIXTURE, meta, tensors)


def load_fixture(path) -> ParityFixture:
    _, meta, tensors = read_container(path, expect_kind=KIND_FIXTURE)
    if "input" not in tensors:
        raise CorruptCheckpointError(f"{path}: fixture has no input waveform tensor")
    refs = {}
    for tap in meta["taps"]:
        name = f"layer.{int(tap)}"
        if name not in tensors:
            raise CorruptCheckpointError(f"{path}: fixture missing reference {name!r}")
        refs[int(tap)] = tensors[name]
    return ParityFixture(
        waveform=tensors["input"],
        references=refs,
        tolerance=float(meta["tolerance"]),
        producer=meta["producer"],
    )


@dataclass
class ParityReport:
    deviations: dict  # layer -> max abs deviation (float32 comparison)
    tolerance: float
    passed: bool
    n_frames: int

    def lines(self):
        for layer in sorted(self.deviations):
            dev = self.deviations[layer]
            status = "ok" if dev <= self.tolerance else "FAIL"
            yield f"layer {layer:>2}: max abs deviation {dev:.3e} [{status}]"


def emit_self_fixture(config: EncoderConfig, weights: EncoderWeights, waveform,
                      taps, tolerance: float = 1e-6,
                      producer: str = "xmodal-self") -> ParityFixture:
    """Record this toolkit's own activations as a fixture (self-consistency).

    References are computed from the float32-rounded waveform that gets
    stored, so verifying against the emitting checkpoint reports exactly 0.
    """
    wav32 = np.asarray(waveform, dtype=np.float32).reshape(1, -1)
    hidden = encode(wav32.astype(np.float64), weights, config, taps=taps)
    refs = {i: hidden[i].astype(np.float32) for i in hidden.indices()}
    return ParityFixture(
        waveform=wav32,
        references=refs,
        tolerance=tolerance,
        producer=producer,
    )


def verify_parity(checkpoint, fixture: ParityFixture) -> ParityReport:
    """Run the encoder on the fixture input and diff against references.

    Comparison happens at float32 precision (the storage precision), so a
    fixture emitted by this toolkit from the same checkpoint reports exactly
    zero deviation. An out-of-tolerance fixture yields a failed report, not
    an exception; geometry mismatches raise FixtureIncompatibleError.
    """
    if isinstance(checkpoint, (str, bytes)) or hasattr(checkpoint, "__fspath__"):
        config, weights = load_checkpoint(checkpoint)
    else:
        config, weights = checkpoint
    wav = np.asarray(fixture.waveform, dtype=np.float64)
    frames = frame_count(wav.shape[-1], config.conv_layers)
    if frames < 1:
        raise FixtureIncompatibleError(
            f"fixture waveform of {wav.shape[-1]} samples yields no frames "
            f"under this checkpoint's conv spec"
        )
    taps = fixture.taps
    if any(t < 0 or t > config.n_transformer_layers for t in taps):
        raise FixtureIncompatibleError(
            f"fixture taps {taps} outside 0..{config.n_transformer_layers}"
        )
    try:
        hidden = encode(wav, weights, config, taps=taps)
    except EncodeInputError as exc:
        raise FixtureIncompatibleError(str(exc)) from None
    deviations = {}
    for tap in taps:
        ref = np.asarray(fixture.references[tap], dtype=np.float64)
        got = hidden[tap].astype(np.float32).astype(np.float64)
        if got.shape != ref.shape:
            raise FixtureIncompatibleError(
                f"layer {tap}: fixture reference shape {ref.shape} != "
                f"encoder output shape {got.shape}"
            )
        deviations[tap] = float(np.abs(got - ref).max()) if ref.size else 0.0
    passed = all(d <= fixture.tolerance for d in deviations.values())
    return ParityReport(
        deviations=deviations,
        tolerance=fixture.tolerance,
        passed=passed,
        n_frames=frames,
    )
