"""Datasets: IDX and CIFAR-binary ingestion, plus a synthetic desk corpus.

The synthetic corpus is built so the class evidence and the nuisance
texture live on opposite sides of the pooling cutoff: class patterns
are combinations of tones strictly inside the kept low-frequency
window (frequency-crop pooling passes them through as exact stride-2
samples), while the texture is confined to the conjugate-closed band
the crop annihilates.  A small broadband component keeps the task from
being a pure two-band toy.

Pixels are in [0, 1] everywhere, stored double; training casts batches
to the model precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .spectral import Layout
from .tensor import Rng

# canonical desk split: 2000 train / 256 val / 512 test
DESK_TRAIN, DESK_VAL, DESK_TEST = 2000, 256, 512
DESK_TOTAL = DESK_TRAIN + DESK_VAL + DESK_TEST


@dataclass(frozen=True)
class Dataset:
    """Images in [0,1], integer labels, disjoint named splits."""

    images: np.ndarray        # [N, C, H, W]
    labels: np.ndarray        # [N]
    splits: dict = field(default_factory=dict)   # name -> index array
    provenance: str = ""

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be [N,C,H,W], got {self.images.shape}")
        n = len(self.images)
        if self.labels.shape != (n,):
            raise ValueError(f"labels shape {self.labels.shape} != ({n},)")
        if n and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixels outside [0, 1]")
        if n and self.labels.min() < 0:
            raise ValueError("negative label")
        seen = np.zeros(n, dtype=bool)
        for name, idx in self.splits.items():
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise ValueError(f"split {name!r} index out of range")
            if seen[idx].any():
                raise ValueError(f"split {name!r} overlaps another split")
            seen[idx] = True

    def __len__(self):
        return len(self.images)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def split(self, name: str):
        """(images, labels) of one named split."""
        if name not in self.splits:
            raise KeyError(f"no split {name!r}; have {sorted(self.splits)}")
        idx = self.splits[name]
        return self.images[idx], self.labels[idx]

    def carve(self, train: int, val: int, test: int) -> "Dataset":
        """Assign the first examples, in order, to train/val/test splits."""
        if train + val + test > len(self):
            raise ValueError(f"carve {train}+{val}+{test} > {len(self)} examples")
        splits = {
            "train": np.arange(0, train),
            "val": np.arange(train, train + val),
            "test": np.arange(train + val, train + val + test),
        }
        return Dataset(self.images, self.labels, splits, self.provenance)


# ---------------------------------------------------------------------------
# IDX (the MNIST container format)

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    """A file failed structural validation (magic, counts, truncation)."""


def _read_exact(buf: bytes, offset: int, count: int, path: str) -> bytes:
    if offset + count > len(buf):
        raise FormatError(f"{path}: truncated at byte {len(buf)}, "
                          f"needed {offset + count}")
    return buf[offset:offset + count]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Parse a big-endian IDX image/label pair into a [N,1,H,W] dataset."""
    with open(images_path, "rb") as f:
        ibuf = f.read()
    with open(labels_path, "rb") as f:
        lbuf = f.read()

    magic, n, rows, cols = struct.unpack(">iiii", _read_exact(ibuf, 0, 16,
                                                              images_path))
    if magic != _IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad magic {magic:#010x}, "
                          f"expected {_IDX_IMAGES_MAGIC:#010x}")
    pixels = _read_exact(ibuf, 16, n * rows * cols, images_path)

    lmagic, ln = struct.unpack(">ii", _read_exact(lbuf, 0, 8, labels_path))
    if lmagic != _IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad magic {lmagic:#010x}, "
                          f"expected {_IDX_LABELS_MAGIC:#010x}")
    if ln != n:
        raise FormatError(f"label count {ln} != image count {n}")
    raw_labels = _read_exact(lbuf, 8, ln, labels_path)

    images = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64) / 255.0
    images = images.reshape(n, 1, rows, cols)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return Dataset(images, labels, {"train": np.arange(n)},
                   provenance=f"idx:{images_path},{labels_path}")


# ---------------------------------------------------------------------------
# CIFAR binary (1 label byte + 3x32x32 channel-major pixel bytes per record)

_CIFAR_RECORD = 1 + 3 * 32 * 32


def load_cifar_binary(path: str) -> Dataset:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) % _CIFAR_RECORD:
        raise FormatError(f"{path}: size {len(buf)} is not a multiple "
                          f"of {_CIFAR_RECORD}")
    n = len(buf) // _CIFAR_RECORD
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(n, _CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    images = raw[:, 1:].astype(np.float64).reshape(n, 3, 32, 32) / 255.0
    return Dataset(images, labels, {"train": np.arange(n)},
                   provenance=f"cifar:{path}")


def save_cifar_binary(path: str, images: np.ndarray, labels: np.ndarray):
    """Emit [N,3,32,32] images in [0,1] as CIFAR records (nearest-u8)."""
    if images.ndim != 4 or images.shape[1:] != (3, 32, 32):
        raise ValueError(f"expected [N,3,32,32], got {images.shape}")
    quantized = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        for img, label in zip(quantized, labels):
            f.write(bytes([int(label)]))
            f.write(img.tobytes())


# ---------------------------------------------------------------------------
# synthetic desk corpus


def annihilated_band_mask(size: int) -> np.ndarray:
    """Origin-layout indicator of bins the frequency crop removes *and*
    whose conjugate mirrors it also removes.

    A real field with spectrum confined to this band maps to (numerical)
    zero under flc_pool; the one-sided negative lines kept by the crop
    are excluded precisely because their mirrors are not.
    """
    low = spectral.ideal_lowpass_mask(size, size, Layout.DC_AT_ORIGIN)
    mirrored = spectral.conjugate_mirror_mask(low)
    return (1.0 - low) * (1.0 - mirrored)


def class_tones(classes: int, size: int) -> list:
    """Distinct below-cutoff tone combinations, one list of (kh, kw) per class.

    Candidate frequencies stay strictly inside the open kept window
    (|k| <= size//4 - 1 per axis) so the patterns survive the crop as
    exact stride-2 samples and even-shift equivariance applies cleanly.
    """
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size}")
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")
    limit = size // 4 - 1
    candidates = [(kh, kw)
                  for kh in range(0, limit + 1)
                  for kw in range(-limit, limit + 1)
                  if (kh, kw) > (0, 0)]  # skip DC and row-negated duplicates
    candidates.sort(key=lambda k: (max(abs(k[0]), abs(k[1])), k))
    per_class = 2 if len(candidates) >= 2 * classes else 1
    if len(candidates) < classes * per_class:
        raise ValueError(f"not enough distinct tones for {classes} classes "
                         f"at size {size}")
    return [candidates[c * per_class:(c + 1) * per_class] for c in range(classes)]


def _tone_stack(tones, size: int, phases: np.ndarray) -> np.ndarray:
    """Sum of unit cosines at ``tones`` with per-example phases; max |.| <= 1."""
    h = np.arange(size)[:, None]
    w = np.arange(size)[None, :]
    acc = np.zeros((len(phases), size, size))
    for t, (kh, kw) in enumerate(tones):
        angle = 2.0 * np.pi * (kh * h + kw * w) / size
        acc += np.cos(angle[None] + phases[:, t, None, None])
    return acc / len(tones)


def _unit_peak(fields: np.ndarray) -> np.ndarray:
    """Scale each [H,W] slice to peak magnitude 1 (zero fields stay zero)."""
    peak = np.abs(fields).max(axis=(-2, -1), keepdims=True)
    return np.divide(fields, peak, out=np.zeros_like(fields), where=peak > 0)


PATTERN_AMP = 0.15      # mean class-pattern amplitude, jittered ±30%
BROADBAND_AMP = 0.02    # full-spectrum noise floor
DEFAULT_TEXTURE_AMP = 0.25


def synth_dataset(rng: Rng, n: int, classes: int = 4, size: int = 16,
                  texture_amp: float = DEFAULT_TEXTURE_AMP) -> Dataset:
    """Generate the desk corpus: low-frequency class signal, high-frequency
    nuisance texture, near-uniform label histogram.

    Every random draw happens regardless of ``texture_amp`` (which only
    scales the texture term), so corpora at different texture levels are
    pixel-comparable.  When ``n`` covers the canonical desk split the
    dataset comes pre-carved into train/val/test; otherwise everything
    lands in a single "train" split.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    headroom = 0.5 - (PATTERN_AMP * 1.3 + texture_amp + BROADBAND_AMP)
    if texture_amp < 0 or headroom < 0:
        raise ValueError(f"texture_amp {texture_amp} would push pixels "
                         f"outside [0, 1]")
    tones = class_tones(classes, size)
    max_tones = max(len(t) for t in tones)

    labels = np.resize(np.arange(classes, dtype=np.int64), n)
    labels = labels[rng.child(0).permutation(n)]
    phases = rng.child(1).uniform((n, max_tones), 0.0, 2.0 * np.pi)
    amps = PATTERN_AMP * rng.child(2).uniform((n,), 0.7, 1.3)
    texture_white = rng.child(3).normal((n, size, size))
    broadband_white = rng.child(4).normal((n, size, size))

    pattern = np.empty((n, size, size))
    for c in range(classes):
        pick = labels == c
        pattern[pick] = _tone_stack(tones[c], size, phases[pick][:, :len(tones[c])])

    band = annihilated_band_mask(size)
    texture = np.fft.ifft2(np.fft.fft2(texture_white) * band).real
    texture = _unit_peak(texture)
    broadband = _unit_peak(broadband_white)

    images = (0.5
              + amps[:, None, None] * pattern
              + texture_amp * texture
              + BROADBAND_AMP * broadband)[:, None, :, :]

    splits = {"train": np.arange(n)}
    dataset = Dataset(images, labels, splits,
                      provenance=(f"synth(n={n},classes={classes},size={size},"
                                  f"texture_amp={texture_amp},seed={rng.seed})"))
    if n >= DESK_TOTAL:
        dataset = dataset.carve(n - DESK_VAL - DESK_TEST, DESK_VAL, DESK_TEST)
    return dataset
