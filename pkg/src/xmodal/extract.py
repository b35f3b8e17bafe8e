"""Drive the encoder over a manifest and cache pooled per-layer embeddings.

Embeddings are pooled over the time dimension per layer. Under the per-axis
channel strategy each channel is encoded separately and the pooled vectors
are concatenated in channel order, so vectors have length
d_model * n_channels; under the magnitude strategy they have length d_model.
Caches reuse the weight_io container and are resumable: records already
present are skipped when the manifest/checkpoint fingerprints match.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import weight_io
from .encoder import EncodeInputError, encode
from .ingest import DatasetManifest, IngestOptions, load_window, prepare_waveforms

POOL_MEAN = "mean"
POOL_MAX = "max"


class EmptyPoolError(ValueError):
    """Pooling was asked to collapse an empty frame sequence."""


class StaleCacheError(ValueError):
    """Existing cache was produced from different inputs or options."""


def pool(frames, method: str = POOL_MEAN) -> np.ndarray:
    """Collapse (T, D) frames to a (D,) vector by per-dimension mean or max."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError(f"pool expects (T, D) frames, got shape {frames.shape}")
    if frames.shape[0] == 0:
        raise EmptyPoolError("cannot pool an empty frame sequence")
    if method == POOL_MEAN:
        return frames.mean(axis=0)
    if method == POOL_MAX:
        return frames.max(axis=0)
    raise ValueError(f"unknown pooling method {method!r}")


@dataclass
class EmbeddingRecord:
    index: int
    vectors: dict  # layer -> (D,) float32
    label_id: int
    subject_id: str


@dataclass
class EmbeddingCache:
    dataset: str
    manifest_sha256: str
    checkpoint_sha256: str
    pooling: str
    channel_strategy: str
    upsample: int
    standardize: bool
    layers: tuple
    records: list = field(default_factory=list)

    @property
    def vector_length(self) -> int:
        if not self.records:
            return 0
        first = self.records[0].vectors
        return int(next(iter(first.values())).shape[0])

    def matrix(self, layer: int) -> np.ndarray:
        """(N, D) float64 matrix of all record vectors at one layer."""
        return np.stack(
            [r.vectors[layer].astype(np.float64) for r in self.records], axis=0
        )

    def labels(self) -> np.ndarray:
        return np.array([r.label_id for r in self.records], dtype=np.int64)

    def subjects(self):
        return [r.subject_id for r in self.records]

    def indices(self):
        return [r.index for r in self.records]


@dataclass
class RunReport:
    n_records: int
    n_computed: int
    n_cached: int
    failures: list = field(default_factory=list)  # (index, message)

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "n_computed": self.n_computed,
            "n_cached": self.n_cached,
            "n_failed": self.n_failed,
            "failures": [{"record": i, "error": msg} for i, msg in self.failures],
        }


def _cache_meta(cache: EmbeddingCache) -> dict:
    return {
        "dataset": cache.dataset,
        "manifest_sha256": cache.manifest_sha256,
        "checkpoint_sha256": cache.checkpoint_sha256,
        "pooling": cache.pooling,
        "channel_strategy": cache.channel_strategy,
        "upsample": cache.upsample,
        "standardize": cache.standardize,
        "layers": list(cache.layers),
        "records": [
            {"index": r.index, "label": r.label_id, "subject": r.subject_id}
            for r in cache.records
        ],
        "vector_length": cache.vector_length,
    }


def save_cache(cache: EmbeddingCache, path) -> None:
    tensors = {}
    for rec in cache.records:
        for layer, vec in rec.vectors.items():
            tensors[f"rec{rec.index}.layer{layer}"] = vec
    weight_io.write_container(
        path, weight_io.KIND_EMBEDDING_CACHE, _cache_meta(cache), tensors
    )


def load_cache(path) -> EmbeddingCache:
    _, meta, tensors = weight_io.read_container(
        path, expect_kind=weight_io.KIND_EMBEDDING_CACHE
    )
    layers = tuple(int(l) for l in meta["layers"])
    records = []
    for entry in meta["records"]:
        idx = int(entry["index"])
        vectors = {}
        for layer in layers:
            name = f"rec{idx}.layer{layer}"
            if name not in tensors:
                raise weight_io.CorruptCheckpointError(
                    f"{path}: cache missing tensor {name!r}"
                )
            vectors[layer] = tensors[name]
        records.append(
            EmbeddingRecord(
                index=idx,
                vectors=vectors,
                label_id=int(entry["label"]),
                subject_id=str(entry["subject"]),
            )
        )
    return EmbeddingCache(
        dataset=str(meta["dataset"]),
        manifest_sha256=str(meta["manifest_sha256"]),
        checkpoint_sha256=str(meta["checkpoint_sha256"]),
        pooling=str(meta["pooling"]),
        channel_strategy=str(meta["channel_strategy"]),
        upsample=int(meta["upsample"]),
        standardize=bool(meta["standardize"]),
        layers=layers,
        records=records,
    )


def extract_embeddings(
    manifest: DatasetManifest,
    checkpoint_path,
    layers,
    pooling: str = POOL_MEAN,
    strategy: str | None = None,
    cache_path=None,
    jobs: int = 1,
    upsample_factor: int | None = None,
    standardize_flag: bool | None = None,
):
    """Embed every manifest record; returns (EmbeddingCache, RunReport).

    Deterministic and resumable: when ``cache_path`` already holds a cache
    with matching fingerprints and options, its records are reused and only
    missing ones are computed. A fingerprint or option mismatch raises
    :class:`StaleCacheError`.
    """
    strategy = strategy or manifest.options.channel_strategy
    up = manifest.options.upsample if upsample_factor is None else int(upsample_factor)
    std = manifest.options.standardize if standardize_flag is None else bool(standardize_flag)
    layers = tuple(sorted(int(l) for l in layers))
    if not layers:
        raise ValueError("at least one layer tap is required")

    manifest_sha = weight_io.file_sha256(manifest.source_path) if manifest.source_path else ""
    checkpoint_sha = weight_io.file_sha256(checkpoint_path)
    config, weights = weight_io.load_checkpoint(checkpoint_path)

    existing: dict = {}
    if cache_path and os.path.exists(cache_path):
        old = load_cache(cache_path)
        stale = []
        if old.manifest_sha256 != manifest_sha:
            stale.append("manifest fingerprint changed")
        if old.checkpoint_sha256 != checkpoint_sha:
            stale.append("checkpoint fingerprint changed")
        if (old.pooling, old.channel_strategy) != (pooling, strategy):
            stale.append("pooling/strategy options changed")
        if (old.upsample, old.standardize) != (up, std):
            stale.append("preprocessing options changed")
        if old.layers != layers:
            stale.append(f"layer set changed ({list(old.layers)} -> {list(layers)})")
        if stale:
            raise StaleCacheError(
                f"cache at {cache_path} is stale: " + "; ".join(stale)
            )
        existing = {r.index: r for r in old.records}

    options = IngestOptions(upsample=up, standardize=std, channel_strategy=strategy)

    def compute(index: int):
        window = load_window(manifest, index)
        waveforms = prepare_waveforms(window, options)
        per_layer: dict = {l: [] for l in layers}
        for wav in waveforms:
            hidden = encode(wav[None, :], weights, config, taps=layers)
            for l in layers:
                per_layer[l].append(pool(hidden[l], pooling))
        vectors = {
            l: np.concatenate(parts).astype(np.float32)
            for l, parts in per_layer.items()
        }
        return EmbeddingRecord(
            index=index,
            vectors=vectors,
            label_id=window.label_id,
            subject_id=window.subject_id,
        )

    pending = [i for i in range(len(manifest.records)) if i not in existing]
    computed: dict = {}
    failures = []
    if pending:
        if jobs and jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
                results = list(pool_exec.map(_guarded(compute), pending))
        else:
            results = [_guarded(compute)(i) for i in pending]
        for index, outcome in zip(pending, results):
            if isinstance(outcome, EmbeddingRecord):
                computed[index] = outcome
            else:
                failures.append((index, outcome))

    records = []
    for i in range(len(manifest.records)):
        if i in existing:
            records.append(existing[i])
        elif i in computed:
            records.append(computed[i])
    cache = EmbeddingCache(
        dataset=manifest.name,
        manifest_sha256=manifest_sha,
        checkpoint_sha256=checkpoint_sha,
        pooling=pooling,
        channel_strategy=strategy,
        upsample=up,
        standardize=std,
        layers=layers,
        records=records,
    )
    if cache_path:
        save_cache(cache, cache_path)
    report = RunReport(
        n_records=len(manifest.records),
        n_computed=len(computed),
        n_cached=len(existing),
        failures=sorted(failures),
    )
    return cache, report


def _guarded(fn):
    def run(index: int):
        try:
            return fn(index)
        except (EncodeInputError, ValueError) as exc:
            return str(exc)

    return run
