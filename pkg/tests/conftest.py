import json
import os

import numpy as np
import pytest

from xmodal.encoder import EncoderConfig, EncoderWeights, random_weights
from xmodal.ingest import load_manifest, save_window_blob
from xmodal.weight_io import save_checkpoint

TOY_CONV_LAYERS = ((8, 10, 5), (8, 3, 2), (8, 3, 2), (8, 3, 2), (8, 3, 2), (8, 2, 2), (8, 2, 2))


def toy_encoder_config(**overrides) -> EncoderConfig:
    base = dict(
        conv_layers=TOY_CONV_LAYERS,
        d_model=16,
        n_transformer_layers=2,
        n_heads=2,
        ffn_dim=32,
        pos_conv_kernel=8,
        pos_conv_groups=4,
    )
    base.update(overrides)
    return EncoderConfig(**base)


@pytest.fixture(scope="session")
def toy_config() -> EncoderConfig:
    return toy_encoder_config()


@pytest.fixture(scope="session")
def toy_weights(toy_config) -> EncoderWeights:
    return random_weights(toy_config, seed=7)


@pytest.fixture(scope="session")
def toy_checkpoint(tmp_path_factory, toy_config, toy_weights):
    path = tmp_path_factory.mktemp("ckpt") / "toy.checkpoint"
    save_checkpoint(toy_config, toy_weights, path, provenance="toy test checkpoint")
    return str(path)


def write_dataset(
    root,
    windows,
    labels,
    subjects,
    label_names,
    sample_rate=100.0,
    eval_scheme=None,
    options=None,
    name="toy",
    csv_indices=(),
):
    """Write window blobs plus a manifest JSON; returns the manifest path."""
    root = str(root)
    os.makedirs(os.path.join(root, "windows"), exist_ok=True)
    records = []
    for i, (window, label, subject) in enumerate(zip(windows, labels, subjects)):
        window = np.asarray(window, dtype=np.float64)
        if window.ndim == 1:
            window = window[None, :]
        if i in csv_indices:
            rel = f"windows/{i:06d}.csv"
            np.savetxt(os.path.join(root, rel), window.T, delimiter=",", fmt="%.8g")
        else:
            rel = f"windows/{i:06d}.f32"
            save_window_blob(os.path.join(root, rel), window)
        records.append({"path": rel, "label": label_names[label], "subject": subject})
    first = np.asarray(windows[0])
    manifest = {
        "name": name,
        "sample_rate": sample_rate,
        "window_samples": int(first.shape[-1]),
        "n_channels": int(first.shape[0]) if first.ndim == 2 else 1,
        "labels": list(label_names),
        "eval_scheme": eval_scheme or {"scheme": "kfold", "k": 2},
        "records": records,
    }
    if options:
        manifest["options"] = options
    path = os.path.join(root, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def sinusoid_task(root, n_windows=40, seed=0, freqs=(5.0, 20.0), n_samples=200,
                  sample_rate=100.0, noise=0.3, eval_scheme=None, options=None,
                  n_subjects=4):
    """Two-class task: windows of one sinusoid each plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    windows, labels, subjects = [], [], []
    t = np.arange(n_samples) / sample_rate
    for i in range(n_windows):
        label = i % 2
        phase = rng.uniform(0, 2 * np.pi)
        wav = np.sin(2 * np.pi * freqs[label] * t + phase)
        wav = wav + rng.normal(0.0, noise, size=n_samples)
        windows.append(wav[None, :])
        labels.append(label)
        subjects.append(f"s{i % n_subjects}")
    path = write_dataset(
        root,
        windows,
        labels,
        subjects,
        label_names=["low", "high"],
        sample_rate=sample_rate,
        eval_scheme=eval_scheme or {"scheme": "kfold", "k": 2},
        options=options,
        name="sinusoids",
    )
    return load_manifest(path)
