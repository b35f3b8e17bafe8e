"""Cross-modal probing toolkit.

Runs wearable-sensor windows through a frozen speech-style encoder, trains
per-layer probes and low-rank adapters, benchmarks against an engineered
features random forest, and analyzes first-layer conv filters spectrally.
"""

__version__ = "0.1.0"
