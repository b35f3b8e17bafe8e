"""Manifest-driven loading of pre-windowed sensor datasets.

A dataset is a JSON manifest plus one data file per window. Data files are
either raw little-endian float32 blobs laid out row-major as
(n_channels, window_samples), or CSV with one row per sample and one column
per channel. Manifest schema:

    {
      "name": "toy",
      "sample_rate": 100.0,
      "window_samples": 200,
      "n_channels": 3,
      "labels": ["sit", "walk"],
      "eval_scheme": {"scheme": "kfold", "k": 5},      // or {"scheme": "loso"}
      "options": {"upsample": 2, "standardize": true,
                  "channel_strategy": "per-axis"},      // optional block
      "records": [
        {"path": "windows/000000.f32", "label": "sit", "subject": "s01"},
        ...
      ]
    }
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

STRATEGY_PER_AXIS = "per-axis"
STRATEGY_MAGNITUDE = "magnitude"

_VAR_GUARD = 1e-8


class ManifestError(ValueError):
    """Manifest validation failed; carries every problem found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__(
            "manifest validation failed:\n  " + "\n  ".join(self.problems)
        )


class RecordLoadError(ValueError):
    """A window data file is unreadable or inconsistent with the manifest."""


@dataclass(frozen=True)
class EvalScheme:
    scheme: str  # "loso" | "kfold"
    k: int = 0


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label_id: int
    subject_id: str


@dataclass(frozen=True)
class IngestOptions:
    upsample: int = 1
    standardize: bool = True
    channel_strategy: str = STRATEGY_PER_AXIS


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    sample_rate: float
    window_samples: int
    n_channels: int
    labels: tuple
    eval_scheme: EvalScheme
    records: tuple
    options: IngestOptions = IngestOptions()
    base_dir: str = "."
    source_path: str = ""

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def record_path(self, index: int) -> str:
        return os.path.join(self.base_dir, self.records[index].path)

    def subjects(self):
        return [r.subject_id for r in self.records]

    def label_ids(self):
        return np.array([r.label_id for r in self.records], dtype=np.int64)


@dataclass
class WindowRecord:
    data: np.ndarray  # (n_channels, n_samples) float64
    sample_rate: float
    label_id: int
    subject_id: str

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


def _expected_blob_bytes(n_channels: int, window_samples: int) -> int:
    return 4 * n_channels * window_samples


def _peek_csv_shape(path):
    rows = 0
    cols = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            n = len(line.split(","))
            if cols is None:
                cols = n
            elif n != cols:
                return None  # ragged
            rows += 1
    return rows, (cols or 0)


def load_manifest(path) -> DatasetManifest:
    """Parse and eagerly validate a manifest; data arrays stay on disk.

    Every violating record is reported, not just the first.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError([f"manifest does not parse as JSON: {exc}"]) from None

    problems = []
    for key in ("name", "sample_rate", "window_samples", "n_channels", "labels",
                "eval_scheme", "records"):
        if key not in raw:
            problems.append(f"missing required field {key!r}")
    if problems:
        raise ManifestError(problems)

    labels = tuple(str(l) for l in raw["labels"])
    if len(set(labels)) != len(labels):
        problems.append("label vocabulary contains duplicates")
    if not labels:
        problems.append("label vocabulary is empty")

    scheme_raw = raw["eval_scheme"]
    scheme = str(scheme_raw.get("scheme", ""))
    k = int(scheme_raw.get("k", 0))
    if scheme not in ("loso", "kfold"):
        problems.append(f"eval_scheme.scheme must be 'loso' or 'kfold', got {scheme!r}")
    if scheme == "kfold" and k < 2:
        problems.append(f"eval_scheme.k must be >= 2 for kfold, got {k}")

    opts_raw = raw.get("options", {})
    options = IngestOptions(
        upsample=int(opts_raw.get("upsample", 1)),
        standardize=bool(opts_raw.get("standardize", True)),
        channel_strategy=str(opts_raw.get("channel_strategy", STRATEGY_PER_AXIS)),
    )
    if options.upsample < 1:
        problems.append(f"options.upsample must be >= 1, got {options.upsample}")
    if options.channel_strategy not in (STRATEGY_PER_AXIS, STRATEGY_MAGNITUDE):
        problems.append(
            f"options.channel_strategy must be '{STRATEGY_PER_AXIS}' or "
            f"'{STRATEGY_MAGNITUDE}', got {options.channel_strategy!r}"
        )

    n_channels = int(raw["n_channels"])
    window_samples = int(raw["window_samples"])
    sample_rate = float(raw["sample_rate"])
    if n_channels < 1:
        problems.append("n_channels must be >= 1")
    if window_samples < 1:
        problems.append("window_samples must be >= 1")
    if sample_rate <= 0:
        problems.append("sample_rate must be positive")

    base_dir = os.path.dirname(os.path.abspath(path))
    label_index = {name: i for i, name in enumerate(labels)}
    records = []
    for i, rec in enumerate(raw["records"]):
        where = f"record {i}"
        rec_path = str(rec.get("path", ""))
        label = rec.get("label")
        subject = str(rec.get("subject", "") or "")
        if not rec_path:
            problems.append(f"{where}: empty data locator")
        if label not in label_index:
            problems.append(f"{where}: unknown label {label!r}")
        if scheme == "loso" and not subject.strip():
            problems.append(f"{where}: blank subject id under loso evaluation")
        full = os.path.join(base_dir, rec_path)
        if rec_path and not os.path.isfile(full):
            problems.append(f"{where}: data file not found: {rec_path}")
        elif rec_path.endswith(".csv"):
            shape = _peek_csv_shape(full)
            if shape is None:
                problems.append(f"{where}: ragged CSV rows in {rec_path}")
            elif shape != (window_samples, n_channels):
                problems.append(
                    f"{where}: {rec_path} has {shape[0]} samples x {shape[1]} channels, "
                    f"manifest expects {window_samples} x {n_channels}"
                )
        elif rec_path:
            size = os.path.getsize(full)
            want = _expected_blob_bytes(n_channels, window_samples)
            if size != want:
                problems.append(
                    f"{where}: {rec_path} is {size} bytes, expected {want} "
                    f"({n_channels} ch x {window_samples} samples x 4)"
                )
        records.append(
            ManifestRecord(
                path=rec_path,
                label_id=label_index.get(label, -1),
                subject_id=subject,
            )
        )

    if problems:
        raise ManifestError(problems)
    return DatasetManifest(
        name=str(raw["name"]),
        sample_rate=sample_rate,
        window_samples=window_samples,
        n_channels=n_channels,
        labels=labels,
        eval_scheme=EvalScheme(scheme=scheme, k=k),
        records=tuple(records),
        options=options,
        base_dir=base_dir,
        source_path=os.path.abspath(path),
    )


def load_window(manifest: DatasetManifest, index: int) -> WindowRecord:
    rec = manifest.records[index]
    path = manifest.record_path(index)
    if rec.path.endswith(".csv"):
        data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2).T
    else:
        flat = np.fromfile(path, dtype="<f4")
        if flat.size != manifest.n_channels * manifest.window_samples:
            raise RecordLoadError(
                f"record {index}: {rec.path} holds {flat.size} samples, expected "
                f"{manifest.n_channels} x {manifest.window_samples}"
            )
        data = flat.astype(np.float64).reshape(
            manifest.n_channels, manifest.window_samples
        )
    if data.shape != (manifest.n_channels, manifest.window_samples):
        raise RecordLoadError(
            f"record {index}: {rec.path} has shape {data.shape}, expected "
            f"({manifest.n_channels}, {manifest.window_samples})"
        )
    if not np.isfinite(data).all():
        raise RecordLoadError(f"record {index}: {rec.path} contains non-finite values")
    return WindowRecord(
        data=data,
        sample_rate=manifest.sample_rate,
        label_id=rec.label_id,
        subject_id=rec.subject_id,
    )


def save_window_blob(path, data) -> None:
    """Write a (C, S) window as the documented little-endian float32 blob."""
    np.ascontiguousarray(np.asarray(data, dtype="<f4")).tofile(path)


def upsample(window: WindowRecord, factor: int) -> WindowRecord:
    """Linear-interpolation upsampling; the tail repeats the final sample."""
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return WindowRecord(
            data=window.data.copy(),
            sample_rate=window.sample_rate,
            label_id=window.label_id,
            subject_id=window.subject_id,
        )
    n = window.n_samples
    positions = np.arange(n * factor, dtype=np.float64) / factor
    grid = np.arange(n, dtype=np.float64)
    data = np.stack([np.interp(positions, grid, ch) for ch in window.data])
    return WindowRecord(
        data=data,
        sample_rate=window.sample_rate * factor,
        label_id=window.label_id,
        subject_id=window.subject_id,
    )


def standardize(window: WindowRecord) -> WindowRecord:
    """Per-channel zero mean / unit variance; constant channels become zeros."""
    data = np.empty_like(window.data)
    for c, ch in enumerate(window.data):
        var = ch.var()
        if var < _VAR_GUARD:
            data[c] = 0.0
        else:
            data[c] = (ch - ch.mean()) / np.sqrt(var)
    return WindowRecord(
        data=data,
        sample_rate=window.sample_rate,
        label_id=window.label_id,
        subject_id=window.subject_id,
    )


def channelize(window: WindowRecord, strategy: str):
    """Split a multi-channel window into mono waveforms for the encoder."""
    if strategy == STRATEGY_PER_AXIS:
        return [window.data[c].copy() for c in range(window.n_channels)]
    if strategy == STRATEGY_MAGNITUDE:
        return [np.sqrt((window.data**2).sum(axis=0))]
    raise ValueError(f"unknown channel strategy {strategy!r}")


def prepare_waveforms(window: WindowRecord, options: IngestOptions):
    """Full preprocessing used by extraction: upsample, standardize, channelize."""
    w = upsample(window, options.upsample)
    if options.standardize:
        w = standardize(w)
    return channelize(w, options.channel_strategy)
