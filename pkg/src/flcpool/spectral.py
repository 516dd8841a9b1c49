"""Two-dimensional discrete spectra and centered frequency-window surgery.

Conventions, frozen across the package:

* the forward transform is **unnormalized**;
* the inverse transform divides by the area of *its own* input grid,
  so ``ifft2(fft2(x)) == x`` at any extents;
* a *centered* layout puts DC at index ``floor(E/2)`` on each axis
  (this is what ``np.fft.fftshift`` does, including odd extents);
* the kept low-frequency window of a full grid with extents ``(H, W)``
  has extents ``(H//2, W//2)`` and is positioned so its own DC bin
  lands on the full grid's DC bin.

Two independent evaluation routes are provided on purpose: ``fft2`` /
``ifft2`` wrap numpy's FFT, while ``dft2`` / ``idft2`` evaluate the
transform as explicit DFT-matrix products.  They must agree to
rounding; keeping both alive guards the fast path.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Layout(enum.Enum):
    """Where the DC bin sits in a stored spectrum."""

    DC_AT_ORIGIN = "dc_at_origin"
    DC_CENTERED = "dc_centered"


@dataclass
class Spectrum:
    """A complex spectrum plus the layout of its frequency axes.

    ``data`` carries at least two axes; the transform always acts on the
    last two.  The layout tag exists so that cropping a spectrum that is
    not centered is a loud error instead of a silent aliasing bug.
    """

    data: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.iscomplexobj(self.data):
            self.data = self.data.astype(np.complex128)
        if self.data.ndim < 2:
            raise ValueError(f"spectrum needs >= 2 axes, got shape {self.data.shape}")
        if not isinstance(self.layout, Layout):
            raise TypeError(f"layout must be a Layout, got {self.layout!r}")

    @property
    def hw(self):
        return self.data.shape[-2], self.data.shape[-1]

    def energy(self) -> float:
        """Total squared magnitude, summed over every axis."""
        return float(np.sum(np.abs(self.data) ** 2))


def _require(spec: Spectrum, layout: Layout, op: str):
    if not isinstance(spec, Spectrum):
        raise TypeError(f"{op} expects a Spectrum, got {type(spec).__name__}")
    if spec.layout is not layout:
        raise ValueError(f"{op} requires {layout.value} layout, got {spec.layout.value}")


# ---------------------------------------------------------------------------
# transforms


def fft2(x: np.ndarray) -> Spectrum:
    """Unnormalized forward transform over the last two axes (fast path)."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        raise ValueError("fft2 expects a real array")
    return Spectrum(np.fft.fft2(x, axes=(-2, -1)), Layout.DC_AT_ORIGIN)


def ifft2(spec: Spectrum) -> np.ndarray:
    """Inverse transform (complex output; divide by this grid's area)."""
    _require(spec, Layout.DC_AT_ORIGIN, "ifft2")
    return np.fft.ifft2(spec.data, axes=(-2, -1))


def _dft_matrix(e: int, sign: float) -> np.ndarray:
    j = np.arange(e)
    return np.exp(sign * 2j * np.pi * np.outer(j, j) / e)


def dft2(x: np.ndarray) -> Spectrum:
    """Forward transform via explicit DFT-matrix products (reference path).

    Same convention as :func:`fft2`; kept deliberately FFT-free so the
    two routes can certify each other.
    """
    x = np.asarray(x)
    if np.iscomplexobj(x):
        raise ValueError("dft2 expects a real array")
    h, w = x.shape[-2], x.shape[-1]
    fh = _dft_matrix(h, -1.0)
    fw = _dft_matrix(w, -1.0)
    out = np.matmul(np.matmul(fh, x.astype(np.complex128)), fw)
    return Spectrum(out, Layout.DC_AT_ORIGIN)


def idft2(spec: Spectrum) -> np.ndarray:
    """Inverse of :func:`dft2`; carries the 1/(H*W) factor."""
    _require(spec, Layout.DC_AT_ORIGIN, "idft2")
    h, w = spec.hw
    bh = _dft_matrix(h, +1.0)
    bw = _dft_matrix(w, +1.0)
    return np.matmul(np.matmul(bh, spec.data), bw) / (h * w)


def fftshift(spec: Spectrum) -> Spectrum:
    """Move DC from the origin to index floor(E/2) on each spatial axis."""
    _require(spec, Layout.DC_AT_ORIGIN, "fftshift")
    return Spectrum(np.fft.fftshift(spec.data, axes=(-2, -1)), Layout.DC_CENTERED)


def ifftshift(spec: Spectrum) -> Spectrum:
    """Undo :func:`fftshift` exactly, including odd extents."""
    _require(spec, Layout.DC_CENTERED, "ifftshift")
    return Spectrum(np.fft.ifftshift(spec.data, axes=(-2, -1)), Layout.DC_AT_ORIGIN)


# ---------------------------------------------------------------------------
# centered windows


@dataclass(frozen=True)
class CutoffSpec:
    """The kept window of a 2x downsampling at given input extents.

    ``window`` holds the half-open (start, stop) index ranges per axis in
    centered coordinates; lengths equal the output extents.
    """

    factor: int
    out_h: int
    out_w: int
    window: tuple

    @classmethod
    def for_extents(cls, h: int, w: int) -> "CutoffSpec":
        if h < 2 or w < 2:
            raise ValueError(f"cutoff needs extents >= 2, got ({h}, {w})")
        out_h, out_w = h // 2, w // 2
        return cls(factor=2, out_h=out_h, out_w=out_w,
                   window=(centered_window(h, out_h), centered_window(w, out_w)))


def centered_window(e_big: int, e_small: int):
    """Half-open index range of an ``e_small`` window centered in ``e_big``.

    Centered means: the window's own DC position ``floor(e_small/2)``
    coincides with the big grid's DC position ``floor(e_big/2)``.  This
    single rule is shared by cropping and padding, which makes
    crop(pad(s)) the identity for every parity combination.
    """
    if not 0 < e_small <= e_big:
        raise ValueError(f"window extent {e_small} not in [1, {e_big}]")
    start = e_big // 2 - e_small // 2
    return start, start + e_small


def crop_center(spec: Spectrum, out_h: int, out_w: int) -> Spectrum:
    """Keep the centered ``out_h x out_w`` window of a centered spectrum."""
    _require(spec, Layout.DC_CENTERED, "crop_center")
    h, w = spec.hw
    hs, he = centered_window(h, out_h)
    ws, we = centered_window(w, out_w)
    return Spectrum(spec.data[..., hs:he, ws:we].copy(), Layout.DC_CENTERED)


def zero_pad_center(spec: Spectrum, out_h: int, out_w: int) -> Spectrum:
    """Embed a centered spectrum in a larger all-zero centered grid.

    Adjoint of :func:`crop_center`: cropping back out returns the input
    bit-for-bit.
    """
    _require(spec, Layout.DC_CENTERED, "zero_pad_center")
    h, w = spec.hw
    if out_h < h or out_w < w:
        raise ValueError(f"pad target ({out_h}, {out_w}) smaller than input ({h}, {w})")
    hs, he = centered_window(out_h, h)
    ws, we = centered_window(out_w, w)
    out = np.zeros(spec.data.shape[:-2] + (out_h, out_w), dtype=spec.data.dtype)
    out[..., hs:he, ws:we] = spec.data
    return Spectrum(out, Layout.DC_CENTERED)


def ideal_lowpass_mask(h: int, w: int, layout: Layout = Layout.DC_CENTERED) -> np.ndarray:
    """Indicator of the kept window: 1 inside, 0 outside, shape [h, w].

    The kept window has extents ``(h//2, w//2)``; for extents divisible
    by 4 it spans frequencies ``-E/4 .. E/4 - 1`` per axis, so one
    negative line is kept whose positive mirror is not.
    """
    if h < 2 or w < 2:
        raise ValueError(f"mask needs extents >= 2, got ({h}, {w})")
    hs, he = centered_window(h, h // 2)
    ws, we = centered_window(w, w // 2)
    mask = np.zeros((h, w))
    mask[hs:he, ws:we] = 1.0
    if layout is Layout.DC_CENTERED:
        return mask
    if layout is Layout.DC_AT_ORIGIN:
        return np.fft.ifftshift(mask)
    raise TypeError(f"layout must be a Layout, got {layout!r}")


def ideal_lowpass(spec: Spectrum) -> Spectrum:
    """Zero every bin outside the kept window; extents unchanged.

    This is the filter (an orthogonal projection: idempotent, never
    energy-increasing); :func:`crop_center` is the downsampler.  Works
    in either layout -- the indicator is built to match.
    """
    h, w = spec.hw
    mask = ideal_lowpass_mask(h, w, spec.layout).astype(spec.data.real.dtype)
    return Spectrum(spec.data * mask, spec.layout)


def conjugate_mirror_mask(mask: np.ndarray) -> np.ndarray:
    """mask evaluated at the conjugate-mirror bin, origin layout: m[-k mod E]."""
    if mask.ndim != 2:
        raise ValueError("expected a 2-axis mask")
    h, w = mask.shape
    ih = (-np.arange(h)) % h
    iw = (-np.arange(w)) % w
    return mask[np.ix_(ih, iw)]


def sinc_kernel(h: int, w: int) -> np.ndarray:
    """Spatial kernel whose circular convolution realizes the ideal lowpass.

    ``Re(ifft2(mask))`` with the mask in origin layout.  The kernel sums
    to exactly 1.  Because taking the real part symmetrizes the
    spectrum, the kernel's own transform equals the mask everywhere the
    mask agrees with its conjugate mirror, and 1/2 on the unmatched
    lines that exist when an extent is divisible by 4.
    """
    mask = ideal_lowpass_mask(h, w, Layout.DC_AT_ORIGIN)
    return np.fft.ifft2(mask).real


# ---------------------------------------------------------------------------
# energy accounting


def above_nyquist_energy(x: np.ndarray):
    """Fraction of spectral energy outside the representable band, per
    [N, C] slice.

    The band is the Hermitian closure of the kept window -- its union
    with the conjugate-mirrored window.  A real field cannot hold the
    -E/4 Nyquist line without its +E/4 mirror (the real part splits each
    such pair half-and-half), so measuring against the bare window would
    charge every real band-limited field for its own mirror lines.
    Against the closure, a 2x crop-reconstruction carries exactly zero
    energy here, while anything that genuinely folds under stride-2
    subsampling does not.

    Returns ``(ratios, mean)`` where ``ratios`` has shape [N, C].  A
    slice with zero total energy contributes a ratio of 0.  Energy is
    measured on the unnormalized spectrum; the ratio is normalization-
    independent anyway.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"expected [N,C,H,W], got shape {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    kept = ideal_lowpass_mask(h, w, Layout.DC_AT_ORIGIN)
    kept = np.maximum(kept, conjugate_mirror_mask(kept))
    power = np.abs(np.fft.fft2(x, axes=(-2, -1))) ** 2
    total = power.sum(axis=(-2, -1))
    high = (power * (1.0 - kept)).sum(axis=(-2, -1))
    ratios = np.divide(high, total, out=np.zeros_like(high), where=total > 0)
    return ratios, float(ratios.mean())
