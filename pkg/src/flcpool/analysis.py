"""Post-hoc analyzers: shift consistency, per-layer aliasing, perturbation
spectra, and file emission for their reports.

Shift consistency uses circular shifts, so the spectral statements about
the pooling family apply exactly to the probe itself.  Reports are
plain dataclasses with documented CSV/JSON emission; spectrum images go
out as 8-bit PGM with per-image min-max normalization (log1p-scaled
first for spectra).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn, spectral, tensor
from .tensor import Rng


@dataclass(frozen=True)
class ShiftConsistencyReport:
    """Fraction of shifted-pair predictions that agree.

    CSV schema: ``scope,pairs,consistency`` with one ``all`` row and one
    row per true class.
    """

    max_shift: int
    pairs_sampled: int
    consistency: float
    per_class: dict          # class -> consistency over that class's pairs
    per_class_pairs: dict    # class -> number of sampled pairs

    def as_dict(self):
        return {
            "max_shift": self.max_shift,
            "pairs_sampled": self.pairs_sampled,
            "consistency": self.consistency,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "per_class_pairs": {str(k): v for k, v in
                                sorted(self.per_class_pairs.items())},
        }

    def to_csv(self) -> str:
        lines = ["scope,pairs,consistency",
                 f"all,{self.pairs_sampled},{self.consistency!r}"]
        for c in sorted(self.per_class):
            lines.append(f"class_{c},{self.per_class_pairs[c]},"
                         f"{self.per_class[c]!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class AliasingReport:
    """Mean above-cutoff energy fraction of every pooling layer's input.

    CSV schema: ``layer,above_nyquist_energy``.
    """

    layer_names: list
    ratios: list

    def as_dict(self):
        return {"layers": {n: r for n, r in zip(self.layer_names, self.ratios)}}

    def to_csv(self) -> str:
        lines = ["layer,above_nyquist_energy"]
        for name, ratio in zip(self.layer_names, self.ratios):
            lines.append(f"{name},{ratio!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PerturbationSpectrumReport:
    """Spatial and centered-spectrum magnitude differences, adv vs clean."""

    spatial_diff: np.ndarray        # [N,C,H,W]
    spectrum_diff: np.ndarray       # [N,C,H,W], DC-centered magnitudes
    mean_spatial_diff: np.ndarray   # [C,H,W]
    mean_spectrum_diff: np.ndarray  # [C,H,W]
    high_freq_share: float          # above-cutoff energy share of the diffs


def shift_consistency(model: nn.Network, x: np.ndarray, y: np.ndarray,
                      max_shift: int = 4, pairs: int = 512,
                      rng: Rng | None = None,
                      batch_size: int = 256) -> ShiftConsistencyReport:
    """Agreement of predictions across two random circular shifts.

    Each of ``pairs`` draws picks an image (with replacement) and two
    independent offsets uniform over [0, max_shift)^2.  max_shift = 1
    makes both offsets (0,0), hence consistency exactly 1.
    """
    if len(x) == 0:
        raise ValueError("empty dataset")
    if max_shift < 1:
        raise ValueError(f"max_shift must be >= 1, got {max_shift}")
    if rng is None:
        raise ValueError("shift_consistency needs an rng")
    x = x.astype(model.dtype, copy=False)
    idx = rng.child(0).integers(0, len(x), (pairs,))
    offs = rng.child(1).integers(0, max_shift, (pairs, 4))

    a = np.empty((pairs,) + x.shape[1:], dtype=x.dtype)
    b = np.empty_like(a)
    for i in range(pairs):
        img = x[idx[i]]
        a[i] = tensor.circular_shift(img, int(offs[i, 0]), int(offs[i, 1]))
        b[i] = tensor.circular_shift(img, int(offs[i, 2]), int(offs[i, 3]))

    agree = np.empty(pairs, dtype=bool)
    for lo in range(0, pairs, batch_size):
        hi = min(lo + batch_size, pairs)
        pa = np.argmax(model.forward(a[lo:hi], nn.Mode.EVAL), axis=1)
        pb = np.argmax(model.forward(b[lo:hi], nn.Mode.EVAL), axis=1)
        agree[lo:hi] = pa == pb

    labels = y[idx]
    per_class, per_pairs = {}, {}
    for c in np.unique(labels):
        pick = labels == c
        per_class[int(c)] = float(agree[pick].mean())
        per_pairs[int(c)] = int(pick.sum())
    return ShiftConsistencyReport(max_shift, pairs, float(agree.mean()),
                                  per_class, per_pairs)


def layer_aliasing_trace(model: nn.Network, probe_batch: np.ndarray) -> AliasingReport:
    """Above-cutoff energy of the input feature maps of every pooling layer."""
    x = probe_batch.astype(model.dtype, copy=False)
    names, ratios = [], []
    for name, layer in model.layers:
        if isinstance(layer, nn.Pool):
            _, mean_ratio = spectral.above_nyquist_energy(x)
            names.append(name)
            ratios.append(mean_ratio)
        x = layer.forward(x, nn.Mode.EVAL)
    if not names:
        raise ValueError("model has no pooling layers to trace")
    return AliasingReport(names, ratios)


def perturbation_spectrum_diff(x: np.ndarray,
                               x_adv: np.ndarray) -> PerturbationSpectrumReport:
    """Fig-style perturbation views: x_adv - x and |F(x_adv)| - |F(x)|."""
    if x.shape != x_adv.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_adv.shape}")
    spatial = (x_adv - x).astype(np.float64)
    mag = np.abs(np.fft.fftshift(np.fft.fft2(x_adv, axes=(-2, -1)),
                                 axes=(-2, -1)))
    mag -= np.abs(np.fft.fftshift(np.fft.fft2(x, axes=(-2, -1)),
                                  axes=(-2, -1)))
    _, hf_share = spectral.above_nyquist_energy(spatial)
    return PerturbationSpectrumReport(
        spatial_diff=spatial,
        spectrum_diff=mag,
        mean_spatial_diff=spatial.mean(axis=0),
        mean_spectrum_diff=mag.mean(axis=0),
        high_freq_share=hf_share,
    )


# ---------------------------------------------------------------------------
# emission


def _json_bytes(payload) -> bytes:
    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")


def to_pgm_bytes(image: np.ndarray, log_scale: bool = False) -> bytes:
    """8-bit binary PGM with per-image min-max normalization.

    A constant image (max == min) maps to uniform 0.  ``log_scale``
    applies log1p(|v|) first -- the documented scaling for spectrum
    images.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-axis image, got shape {img.shape}")
    if log_scale:
        img = np.log1p(np.abs(img))
    lo, hi = img.min(), img.max()
    if hi > lo:
        quant = np.rint((img - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        quant = np.zeros(img.shape, dtype=np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + quant.tobytes()


def emit_report(report, path: str, format: str = "json"):
    """Write a report to disk; byte-deterministic for fixed inputs.

    csv/json accept the analyzer report types (and anything with
    ``to_csv``/``as_dict``); pgm accepts a single 2-axis array.
    """
    if format == "json":
        if hasattr(report, "as_dict"):
            payload = report.as_dict()
        elif isinstance(report, dict):
            payload = report
        else:
            raise TypeError(f"cannot serialize {type(report).__name__} as json")
        data = _json_bytes(payload)
    elif format == "csv":
        if not hasattr(report, "to_csv"):
            raise TypeError(f"cannot serialize {type(report).__name__} as csv")
        data = report.to_csv().encode("utf-8")
    elif format == "pgm":
        data = to_pgm_bytes(np.asarray(report))
    else:
        raise ValueError(f"unknown report format {format!r}")
    with open(path, "wb") as f:
        f.write(data)
    return path
