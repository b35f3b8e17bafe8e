"""Record upstream reference activations as parity fixtures.

The fixture pairs a waveform with per-layer activations computed by the
upstream implementation, under the consuming toolkit's layer convention:
tap 0 is the feature-projection output (captured with a forward hook,
before the positional embedding), taps 1..L are the per-layer entries of
the upstream hidden-states tuple. Tolerance defaults to the 1e-3 max-abs
cross-implementation budget at float32.
"""

from __future__ import annotations

import numpy as np

from .container import write_fixture

DEFAULT_TOLERANCE = 1e-3


class FixtureError(ValueError):
    pass


def fixture_waveform(length: int = 400, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=length).astype(np.float32)


def emit_fixture(model, waveform, taps, tolerance: float = DEFAULT_TOLERANCE,
                 producer: str | None = None) -> dict:
    """Returns {"waveform", "references", "tolerance", "producer"}."""
    import torch
    import transformers

    if model.training:
        raise FixtureError(
            "model is in training mode; call .eval() for deterministic references"
        )
    n_layers = int(model.config.num_hidden_layers)
    taps = sorted(int(t) for t in taps)
    if any(t < 0 or t > n_layers for t in taps):
        raise FixtureError(f"taps {taps} outside 0..{n_layers}")

    wav32 = np.asarray(waveform, dtype=np.float32).reshape(-1)
    captured = {}

    def grab_projection(_module, _inputs, output):
        # wav2vec2's projection returns (hidden_states, pre-projection norm),
        # hubert's returns the hidden states directly
        tensor = output[0] if isinstance(output, tuple) else output
        captured["projection"] = tensor.detach()

    handle = model.feature_projection.register_forward_hook(grab_projection)
    try:
        with torch.no_grad():
            out = model(
                torch.from_numpy(wav32)[None, :], output_hidden_states=True
            )
    finally:
        handle.remove()

    references = {}
    for tap in taps:
        if tap == 0:
            references[0] = captured["projection"][0].numpy().astype(np.float32)
        else:
            references[tap] = (
                out.hidden_states[tap][0].detach().numpy().astype(np.float32)
            )
    if producer is None:
        producer = (
            f"xmodal-exporter/{type(model).__name__} "
            f"transformers-{transformers.__version__}"
        )
    return {
        "waveform": wav32.reshape(1, -1),
        "references": references,
        "tolerance": float(tolerance),
        "producer": producer,
    }


def save_fixture(path, fixture: dict) -> None:
    write_fixture(
        path,
        fixture["waveform"],
        fixture["references"],
        fixture["tolerance"],
        fixture["producer"],
    )
