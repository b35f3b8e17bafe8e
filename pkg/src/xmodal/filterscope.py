"""First-layer conv filter interpretability: norms, spectra, band classes.

Filters are ranked by the L2 norm of their taps; each selected filter gets a
zero-padded magnitude DFT response over normalized frequency 0..0.5 and a
heuristic band class. The position/ratio thresholds of the classifier are
scale-free and config-exposed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

BAND_LOWPASS = "lowpass"
BAND_HIGHPASS = "highpass"
BAND_BANDPASS = "bandpass"
BAND_BROADBAND = "broadband"

DEFAULT_N_FFT = 512


@dataclass(frozen=True)
class BandThresholds:
    low_position: float = 0.1  # peak at/below this fraction may be lowpass
    high_position: float = 0.9  # peak at/above this fraction may be highpass
    tail_ratio: float = 0.3  # opposite-edge magnitude vs peak for low/high
    edge_ratio: float = 0.5  # both-edge magnitude vs peak for bandpass

    def to_json_dict(self) -> dict:
        return {
            "low_position": self.low_position,
            "high_position": self.high_position,
            "tail_ratio": self.tail_ratio,
            "edge_ratio": self.edge_ratio,
        }


@dataclass
class FilterReport:
    index: int
    l2_norm: float
    taps: np.ndarray
    response: np.ndarray  # n_fft/2 + 1 magnitudes
    band_class: str


def select_filters(conv_weights_layer0, top_k: int):
    """Indices of the top_k filters by tap L2 norm, descending; ties keep
    the lower index first."""
    w = np.asarray(conv_weights_layer0, dtype=np.float64)
    if w.ndim == 3:
        flat = w.reshape(w.shape[0], -1)
    elif w.ndim == 2:
        flat = w
    else:
        raise ValueError(f"expected (C, 1, K) or (C, K) filters, got shape {w.shape}")
    c = flat.shape[0]
    if top_k > c:
        raise ValueError(f"top_k={top_k} exceeds filter count {c}")
    if top_k < 0:
        raise ValueError(f"top_k must be >= 0, got {top_k}")
    norms = np.sqrt((flat**2).sum(axis=1))
    order = np.lexsort((np.arange(c), -norms))
    return [int(i) for i in order[:top_k]]


def frequency_response(taps, n_fft: int = DEFAULT_N_FFT) -> np.ndarray:
    """|DFT| of zero-padded taps at bins 0..n_fft/2."""
    taps = np.asarray(taps, dtype=np.float64).ravel()
    if n_fft < taps.size:
        raise ValueError(f"n_fft={n_fft} is smaller than tap count {taps.size}")
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ValueError(f"n_fft must be a power of two >= 2, got {n_fft}")
    return np.abs(np.fft.rfft(taps, n_fft))


def classify_response(spectrum, thresholds: BandThresholds = BandThresholds()) -> str:
    """Heuristic band label from peak position and edge-to-peak ratios."""
    spectrum = np.asarray(spectrum, dtype=np.float64).ravel()
    if spectrum.size == 0:
        raise ValueError("empty spectrum")
    peak = float(spectrum.max())
    if peak <= 0.0 or spectrum.size == 1:
        return BAND_BROADBAND
    pos = float(np.argmax(spectrum)) / (spectrum.size - 1)
    low_edge = float(spectrum[0])
    high_edge = float(spectrum[-1])
    if pos <= thresholds.low_position and high_edge < thresholds.tail_ratio * peak:
        return BAND_LOWPASS
    if pos >= thresholds.high_position and low_edge < thresholds.tail_ratio * peak:
        return BAND_HIGHPASS
    if (
        thresholds.low_position < pos < thresholds.high_position
        and low_edge < thresholds.edge_ratio * peak
        and high_edge < thresholds.edge_ratio * peak
    ):
        return BAND_BANDPASS
    return BAND_BROADBAND


def analyze_filters(
    conv_weights_layer0,
    top_k: int,
    n_fft: int = DEFAULT_N_FFT,
    thresholds: BandThresholds = BandThresholds(),
    indices=None,
):
    """FilterReports for the selected (or explicitly given) filter indices."""
    w = np.asarray(conv_weights_layer0, dtype=np.float64)
    flat = w.reshape(w.shape[0], -1) if w.ndim == 3 else w
    chosen = list(indices) if indices is not None else select_filters(w, top_k)
    reports = []
    for i in chosen:
        taps = flat[i]
        response = frequency_response(taps, n_fft)
        reports.append(
            FilterReport(
                index=int(i),
                l2_norm=float(np.sqrt((taps**2).sum())),
                taps=taps.copy(),
                response=response,
                band_class=classify_response(response, thresholds),
            )
        )
    return reports


# ---------------------------------------------------------------------------
# Emission: CSV + compact SVG line chart
# ---------------------------------------------------------------------------


def reports_to_csv(reports) -> str:
    """(filter, bin, magnitude) rows for plotting."""
    lines = ["filter,bin,magnitude"]
    for rep in reports:
        for b, mag in enumerate(rep.response):
            lines.append(f"{rep.index},{b},{float(mag)!r}")
    return "\n".join(lines) + "\n"


def reports_to_summary_json(reports, thresholds: BandThresholds) -> str:
    doc = {
        "thresholds": thresholds.to_json_dict(),
        "filters": [
            {
                "index": r.index,
                "l2_norm": r.l2_norm,
                "band_class": r.band_class,
                "taps": [float(t) for t in r.taps],
            }
            for r in reports
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


_PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#e377c2", "#17becf",
)


def reports_to_svg(reports, width: int = 640, height: int = 360) -> str:
    """Deterministic standalone SVG: one response curve per filter."""
    margin = 48
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    peak = max((float(r.response.max()) for r in reports), default=1.0) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">normalized frequency (0..0.5)</text>',
        f'<text x="14" y="{height // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height // 2})">|H(f)|</text>',
    ]
    for i, rep in enumerate(reports):
        n = rep.response.size
        pts = []
        for b, mag in enumerate(rep.response):
            x = margin + plot_w * (b / (n - 1) if n > 1 else 0.0)
            y = height - margin - plot_h * (float(mag) / peak)
            pts.append(f"{x:.2f},{y:.2f}")
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{" ".join(pts)}"/>'
        )
        label_y = margin + 14 * (i + 1)
        parts.append(
            f'<text x="{width - margin - 4}" y="{label_y}" text-anchor="end" '
            f'font-size="11" fill="{color}">filter {rep.index} '
            f'({rep.band_class})</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
